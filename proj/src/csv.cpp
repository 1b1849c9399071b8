#include <excusum/csv.hpp>
#include <excusum/text.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

namespace excusum {
namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

Error parse_error(Index line, const std::string& what) {
    return Error(ErrorCode::Parse, "line " + std::to_string(line) + ": " + what);
}

double parse_number(std::string_view field, Index line, const std::string& column) {
    std::string_view s = trim(field);
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) {
        throw parse_error(line, "column '" + column + "': '" + std::string(field) + "' is not a finite number");
    }
    return value;
}

}  // namespace

CsvReader::CsvReader(std::istream& in, char delimiter) : m_in(in), m_delimiter(delimiter) {
    if (delimiter == '"' || delimiter == '\n' || delimiter == '\r') {
        throw Error(ErrorCode::InvalidArgument, "invalid CSV delimiter");
    }
}

std::optional<std::vector<std::string>> CsvReader::next() {
    std::string line;
    while (true) {
        if (!std::getline(m_in, line)) {
            return std::nullopt;
        }
        ++m_line;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!trim(line).empty()) {
            break;
        }
    }
    m_record_line = m_line;

    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    std::size_t i = 0;
    while (true) {
        if (i == line.size()) {
            if (!quoted) {
                break;
            }
            // Quoted field continues on the next physical line.
            if (!std::getline(m_in, line)) {
                throw parse_error(m_record_line, "unterminated quoted field");
            }
            ++m_line;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            field += '\n';
            i = 0;
            continue;
        }
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
        } else if (ch == '"') {
            if (!trim(field).empty()) {
                throw parse_error(m_line, "quote inside an unquoted field");
            }
            field.clear();
            quoted = true;
            was_quoted = true;
        } else if (ch == m_delimiter) {
            fields.push_back(was_quoted ? field : std::string(trim(field)));
            field.clear();
            was_quoted = false;
        } else {
            if (was_quoted && ch != ' ' && ch != '\t') {
                throw parse_error(m_line, "characters after a closing quote");
            }
            if (!was_quoted) {
                field += ch;
            }
        }
        ++i;
    }
    fields.push_back(was_quoted ? field : std::string(trim(field)));
    return fields;
}

ColumnMap resolve_columns(const CsvSchema& schema, const std::vector<std::string>& header) {
    auto find = [&](const std::string& name) -> Index {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw Error(ErrorCode::Parse, "column '" + name + "' not found in header");
        }
        return static_cast<Index>(it - header.begin());
    };
    ColumnMap map;
    map.width = header.size();
    map.response = find(schema.response);
    if (schema.features.empty()) {
        for (Index j = 0; j < header.size(); ++j) {
            if (j != map.response) {
                map.features.push_back(j);
                map.feature_names.push_back(header[j]);
            }
        }
    } else {
        for (const std::string& name : schema.features) {
            if (name == schema.response) {
                throw Error(ErrorCode::Parse, "response column '" + name + "' is also listed as a feature");
            }
            if (std::find(map.feature_names.begin(), map.feature_names.end(), name) != map.feature_names.end()) {
                throw Error(ErrorCode::Parse, "feature column '" + name + "' is listed twice");
            }
            map.features.push_back(find(name));
            map.feature_names.push_back(name);
        }
    }
    if (map.features.empty()) {
        throw Error(ErrorCode::Parse, "no feature columns");
    }
    return map;
}

void parse_row(const std::vector<std::string>& record, const ColumnMap& columns, Index line, double& y,
               std::vector<double>& x) {
    if (record.size() != columns.width) {
        throw parse_error(line, "expected " + std::to_string(columns.width) + " fields, found " +
                                    std::to_string(record.size()));
    }
    y = parse_number(record[columns.response], line, "response");
    x.resize(columns.features.size());
    for (std::size_t j = 0; j < columns.features.size(); ++j) {
        x[j] = parse_number(record[columns.features[j]], line, columns.feature_names[j]);
    }
}

CsvData read_csv_dataset(std::istream& in, const CsvSchema& schema) {
    CsvReader reader(in, schema.delimiter);
    auto first = reader.next();
    if (!first) {
        throw Error(ErrorCode::Parse, "CSV input is empty");
    }
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> records;
    std::vector<Index> lines;
    if (schema.has_header) {
        header = *first;
    } else {
        for (Index j = 0; j < first->size(); ++j) {
            header.push_back(std::to_string(j + 1));
        }
        records.push_back(std::move(*first));
        lines.push_back(reader.record_line());
    }
    const ColumnMap columns = resolve_columns(schema, header);
    while (auto rec = reader.next()) {
        records.push_back(std::move(*rec));
        lines.push_back(reader.record_line());
    }
    if (records.empty()) {
        throw Error(ErrorCode::Parse, "CSV input has no data rows");
    }
    Eigen::VectorXd y(static_cast<Eigen::Index>(records.size()));
    Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(columns.features.size()));
    std::vector<double> row;
    for (std::size_t i = 0; i < records.size(); ++i) {
        double yi = 0.0;
        parse_row(records[i], columns, lines[i], yi, row);
        y[static_cast<Eigen::Index>(i)] = yi;
        for (std::size_t j = 0; j < row.size(); ++j) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        }
    }
    return {Dataset(std::move(y), std::move(x)), columns};
}

CsvData read_csv_dataset(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    }
    return read_csv_dataset(in, schema);
}

void write_csv_dataset(std::ostream& out, const Dataset& data, const std::string& response,
                       const std::vector<std::string>& features, char delimiter) {
    if (features.size() != data.p()) {
        throw Error(ErrorCode::DimensionMismatch, "feature names do not match the design");
    }
    auto quote = [&](const std::string& s) {
        if (s.find_first_of(std::string("\"\r\n") + delimiter) == std::string::npos) {
            return s;
        }
        std::string q = "\"";
        for (const char c : s) {
            q += c == '"' ? std::string("\"\"") : std::string(1, c);
        }
        return q + "\"";
    };
    out << quote(response);
    for (const auto& f : features) {
        out << delimiter << quote(f);
    }
    out << '\n';
    for (Index i = 0; i < data.n(); ++i) {
        out << format_double(data.y()[static_cast<Eigen::Index>(i)]);
        for (Index j = 0; j < data.p(); ++j) {
            out << delimiter << format_double(data.x()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        out << '\n';
    }
}

}  // namespace excusum

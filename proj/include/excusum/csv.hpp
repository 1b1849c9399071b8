#pragma once

#include <excusum/expectile.hpp>

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace excusum {

/// Incremental RFC 4180 reader: quoted fields may contain the delimiter, doubled
/// quotes and line breaks. Accepts LF and CRLF endings.
class CsvReader {
public:
    explicit CsvReader(std::istream& in, char delimiter = ',');

    /// Next record, or nullopt at end of input. Blank lines are skipped.
    std::optional<std::vector<std::string>> next();
    /// Line on which the most recently returned record started (1-based).
    [[nodiscard]] Index record_line() const noexcept { return m_record_line; }

private:
    std::istream& m_in;
    char m_delimiter;
    Index m_line = 0;
    Index m_record_line = 0;
};

struct CsvSchema {
    std::string response;
    std::vector<std::string> features;  ///< empty means every other column
    bool has_header = true;
    char delimiter = ',';
};

/// Column positions of a schema against a header. Without a header the names are
/// 1-based column numbers.
struct ColumnMap {
    Index response = 0;
    std::vector<Index> features;
    std::vector<std::string> feature_names;
    Index width = 0;
};

[[nodiscard]] ColumnMap resolve_columns(const CsvSchema& schema, const std::vector<std::string>& header);

/// Parses one record into (y, x) under `columns`; errors name the line and column.
void parse_row(const std::vector<std::string>& record, const ColumnMap& columns, Index line,
               double& y, std::vector<double>& x);

struct CsvData {
    Dataset data;
    ColumnMap columns;
};

/// Reads a whole file. Throws Parse on malformed content and Io when unreadable.
[[nodiscard]] CsvData read_csv_dataset(std::istream& in, const CsvSchema& schema);
[[nodiscard]] CsvData read_csv_dataset(const std::string& path, const CsvSchema& schema);

/// Writes y then the columns of x with shortest round-trip decimals.
void write_csv_dataset(std::ostream& out, const Dataset& data, const std::string& response,
                       const std::vector<std::string>& features, char delimiter = ',');

}  // namespace excusum

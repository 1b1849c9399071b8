#include <excusum/config.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace excusum {
namespace {

std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

Error bad_value(std::string_view what, std::string_view text, std::string_view expected) {
    return Error(ErrorCode::Parse, "key '" + std::string(what) + "': '" + std::string(text) + "' is not " +
                                       std::string(expected));
}

/// Rethrows parse failures of enum values with the key attached.
template <class F>
auto with_key(std::string_view key, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(ErrorCode::Parse, "key '" + std::string(key) + "': " + e.what());
    }
}

template <class T, class F>
std::vector<T> parse_list(std::string_view key, std::string_view text, F&& parse_one) {
    std::vector<T> out;
    for (const std::string& item : split_list(text)) {
        out.push_back(parse_one(item));
    }
    if (out.empty()) {
        throw Error(ErrorCode::Parse, "key '" + std::string(key) + "': empty list");
    }
    return out;
}

Eigen::VectorXd parse_vector(std::string_view key, std::string_view text) {
    const auto values = parse_list<double>(key, text, [&](const std::string& s) { return parse_real(s, key); });
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

bool apply_critval_key(CriticalValueSettings& settings, std::optional<std::filesystem::path>& cache,
                       const ConfigEntry& e) {
    if (e.key == "critval_n_paths") {
        settings.n_paths = parse_count(e.value, e.key);
    } else if (e.key == "critval_n_grid") {
        settings.n_grid = parse_count(e.value, e.key);
    } else if (e.key == "critval_seed") {
        settings.seed = parse_seed(e.value, e.key);
    } else if (e.key == "critval_workers") {
        settings.workers = static_cast<unsigned>(parse_count(e.value, e.key));
    } else if (e.key == "critval_cache") {
        cache = std::filesystem::path(e.value);
    } else {
        return false;
    }
    return true;
}

Error unknown_key(const ConfigEntry& e) {
    return Error(ErrorCode::Parse, "unknown key '" + e.key + "' (line " + std::to_string(e.line) + ")");
}

}  // namespace

std::vector<std::string> split_list(std::string_view text, char separator) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find(separator, start), text.size());
        const std::string_view item = trim(text.substr(start, end - start));
        if (!item.empty()) {
            out.emplace_back(item);
        }
        start = end + 1;
    }
    return out;
}

double parse_real(std::string_view text, std::string_view what) {
    std::string_view s = trim(text);
    if (s == "inf" || s == "+inf") {
        return std::numeric_limits<double>::infinity();
    }
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || std::isnan(value)) {
        throw bad_value(what, text, "a number");
    }
    return value;
}

Index parse_count(std::string_view text, std::string_view what) {
    const std::string_view s = trim(text);
    unsigned long long value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw bad_value(what, text, "a non-negative integer");
    }
    return static_cast<Index>(value);
}

std::uint64_t parse_seed(std::string_view text, std::string_view what) {
    std::string_view s = trim(text);
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, base);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw bad_value(what, text, "an unsigned 64-bit integer");
    }
    return value;
}

std::vector<ConfigEntry> parse_key_values(std::istream& in) {
    std::vector<ConfigEntry> entries;
    std::map<std::string, Index> seen;
    std::string raw;
    Index line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string_view s = raw;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) {
            s = s.substr(0, hash);
        }
        s = trim(s);
        if (s.empty()) {
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorCode::Parse, "line " + std::to_string(line) + ": expected key=value");
        }
        std::string key(trim(s.substr(0, eq)));
        if (key.empty()) {
            throw Error(ErrorCode::Parse, "line " + std::to_string(line) + ": empty key");
        }
        if (const auto [it, fresh] = seen.emplace(key, line); !fresh) {
            throw Error(ErrorCode::Parse, "line " + std::to_string(line) + ": key '" + key +
                                              "' already set on line " + std::to_string(it->second));
        }
        entries.push_back({std::move(key), std::string(trim(s.substr(eq + 1))), line});
    }
    return entries;
}

std::vector<ConfigEntry> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    }
    return parse_key_values(in);
}

MonitorConfig RunConfig::monitor_config(Index m_rows) const {
    MonitorConfig out;
    out.gamma = gamma;
    out.alpha = alpha;
    if (procedure == ProcedureKind::Closed) {
        if (!T_m || *T_m == 0) {
            throw Error(ErrorCode::InvalidArgument, "the closed-end procedure needs T_m >= 1");
        }
        out.procedure = ClosedEnd{static_cast<double>(*T_m) / static_cast<double>(m_rows), *T_m};
    }
    out.validate();
    return out;
}

PenaltyConfig RunConfig::penalty(Index m_rows) const {
    PenaltyConfig out = PenaltyConfig::for_sample_size(m_rows, lambda_exponent, phi);
    if (lambda) {
        out.lambda = *lambda;
    }
    out.validate();
    return out;
}

void apply_run_config(RunConfig& config, const std::vector<ConfigEntry>& entries) {
    for (const ConfigEntry& e : entries) {
        if (e.key == "m") {
            config.m = parse_count(e.value, e.key);
        } else if (e.key == "tau") {
            if (e.value == "auto") {
                config.tau.reset();
            } else {
                config.tau = parse_real(e.value, e.key);
            }
        } else if (e.key == "gamma") {
            config.gamma = parse_real(e.value, e.key);
        } else if (e.key == "alpha") {
            config.alpha = parse_real(e.value, e.key);
        } else if (e.key == "procedure") {
            config.procedure = with_key(e.key, [&] { return parse_procedure_kind(e.value); });
        } else if (e.key == "T_m") {
            config.T_m = parse_count(e.value, e.key);
        } else if (e.key == "statistic") {
            config.statistic = with_key(e.key, [&] { return parse_statistic_kind(e.value); });
        } else if (e.key == "oracle_set") {
            config.oracle_set = split_list(e.value);
        } else if (e.key == "lambda_exponent") {
            config.lambda_exponent = parse_real(e.value, e.key);
        } else if (e.key == "phi") {
            config.phi = parse_real(e.value, e.key);
        } else if (e.key == "lambda") {
            config.lambda = parse_real(e.value, e.key);
        } else if (!apply_critval_key(config.critval, config.critval_cache, e)) {
            throw unknown_key(e);
        }
    }
}

ScenarioConfig scenario_from_entries(const std::vector<ConfigEntry>& entries) {
    ScenarioConfig config;
    bool h1 = false;
    Index k0 = 100;
    std::optional<Eigen::VectorXd> beta1;
    for (const ConfigEntry& e : entries) {
        const std::string_view key = e.key;
        if (key == "design") {
            config.design = with_key(key, [&] { return parse_design(e.value); });
        } else if (key == "error") {
            config.error = with_key(key, [&] { return parse_error_law(e.value); });
        } else if (key == "m") {
            config.m = parse_count(e.value, key);
        } else if (key == "p") {
            config.p = parse_count(e.value, key);
        } else if (key == "T_m") {
            config.T_m = parse_count(e.value, key);
        } else if (key == "hypothesis") {
            if (e.value == "H0") {
                h1 = false;
            } else if (e.value == "H1") {
                h1 = true;
            } else {
                throw bad_value(key, e.value, "H0 or H1");
            }
        } else if (key == "k0") {
            k0 = parse_count(e.value, key);
        } else if (key == "beta0") {
            config.beta0 = parse_vector(key, e.value);
        } else if (key == "beta1") {
            beta1 = parse_vector(key, e.value);
        } else if (key == "gamma") {
            config.gamma_list = parse_list<double>(key, e.value, [&](const std::string& s) { return parse_real(s, key); });
        } else if (key == "alpha") {
            config.alpha = parse_real(e.value, key);
        } else if (key == "procedure") {
            config.procedures = parse_list<ProcedureKind>(
                key, e.value, [&](const std::string& s) { return with_key(key, [&] { return parse_procedure_kind(s); }); });
        } else if (key == "statistic") {
            config.statistics = parse_list<StatisticKind>(
                key, e.value, [&](const std::string& s) { return with_key(key, [&] { return parse_statistic_kind(s); }); });
        } else if (key == "replications") {
            config.replications = parse_count(e.value, key);
        } else if (key == "master_seed") {
            config.master_seed = parse_seed(e.value, key);
        } else if (key == "workers") {
            config.workers = static_cast<unsigned>(parse_count(e.value, key));
        } else if (key == "tau_source") {
            config.tau_source = with_key(key, [&] { return parse_tau_source(e.value); });
        } else if (key == "lambda_exponent") {
            config.lambda_exponent = parse_real(e.value, key);
        } else if (key == "phi") {
            config.phi = parse_real(e.value, key);
        } else if (key == "lambda") {
            config.lambda = parse_real(e.value, key);
        } else if (key == "critical_value") {
            config.critical_value_override = parse_real(e.value, key);
        } else if (!apply_critval_key(config.critval, config.critval_cache, e)) {
            throw unknown_key(e);
        }
    }
    if (h1) {
        config.hypothesis = Change{k0, beta1 ? *beta1 : default_beta1(config.p)};
    } else if (beta1) {
        throw Error(ErrorCode::Parse, "key 'beta1' requires hypothesis = H1");
    }
    with_key("scenario", [&] { config.validate(); });
    return config;
}

}  // namespace excusum

#include <excusum/critical_values.hpp>
#include <excusum/text.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace excusum {
namespace {

template <class T>
T parse_field(const std::string& text, Index line_number, const char* name) {
    T value{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw Error(ErrorCode::CorruptCache, "line " + std::to_string(line_number) + ": bad " + name +
                                                 " '" + text + "'");
    }
    return value;
}

bool same_run(const CriticalValueEstimate& e, const CriticalValueKey& key,
              const CriticalValueSettings& settings) {
    return e.key == key && e.n_paths == settings.n_paths && e.n_grid == settings.n_grid &&
           e.seed == settings.seed;
}

}  // namespace

void CriticalValueKey::validate() const {
    if (dim < 1) {
        throw Error(ErrorCode::InvalidArgument, "critical value dimension must be >= 1");
    }
    if (!(gamma >= 0.0 && gamma < 0.5)) {
        throw Error(ErrorCode::InvalidArgument, "gamma must lie in [0, 0.5)");
    }
    if (!(L > 0.0 && L <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "L must lie in (0, 1]");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
    }
}

SupWienerSampler::SupWienerSampler(Index dim, double gamma, double L, Index n_grid)
    : m_dim(dim),
      m_n_grid(n_grid),
      m_step_sd(std::sqrt(L / static_cast<double>(n_grid))),
      m_time_weight(n_grid),
      m_abs_max(n_grid) {
    CriticalValueKey{dim, gamma, L, 0.5}.validate();
    if (n_grid < 100) {
        throw Error(ErrorCode::InvalidArgument, "n_grid must be at least 100");
    }
    for (Index j = 0; j < n_grid; ++j) {
        const double t = static_cast<double>(j + 1) * L / static_cast<double>(n_grid);
        m_time_weight[j] = gamma == 0.0 ? 1.0 : std::pow(t, -gamma);
    }
}

double simulate_sup_wiener(Index dim, double gamma, double L, Index n_grid, Engine& rng) {
    NormalDistribution normal;
    return simulate_sup_wiener(dim, gamma, L, n_grid, [&] { return normal(rng); });
}

std::vector<double> simulate_sup_draws(const CriticalValueKey& key,
                                       const CriticalValueSettings& settings) {
    key.validate();
    if (settings.n_paths < 1) {
        throw Error(ErrorCode::InvalidArgument, "n_paths must be positive");
    }
    std::vector<double> draws(settings.n_paths);
    const unsigned workers =
        std::max(1u, std::min<unsigned>(settings.workers, static_cast<unsigned>(settings.n_paths)));

    auto work = [&](Index first, Index last) {
        SupWienerSampler sampler(key.dim, key.gamma, key.L, settings.n_grid);
        for (Index path = first; path < last; ++path) {
            Engine rng = substream(settings.seed, path);
            NormalDistribution normal;
            draws[path] = sampler.draw([&] { return normal(rng); });
        }
    };

    if (workers == 1) {
        work(0, settings.n_paths);
    } else {
        std::vector<std::thread> threads;
        const Index chunk = (settings.n_paths + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const Index first = std::min<Index>(settings.n_paths, w * chunk);
            const Index last = std::min<Index>(settings.n_paths, first + chunk);
            threads.emplace_back(work, first, last);
        }
        for (auto& t : threads) {
            t.join();
        }
    }
    return draws;
}

std::pair<double, double> upper_quantile(std::vector<double> draws, double alpha) {
    if (draws.empty()) {
        throw Error(ErrorCode::InvalidArgument, "no draws");
    }
    std::sort(draws.begin(), draws.end());
    const auto n = static_cast<double>(draws.size());
    const double q = 1.0 - alpha;
    auto order_statistic = [&](double rank) {
        // 1-based rank, clamped to the sample
        const double r = std::clamp(rank, 1.0, n);
        return draws[static_cast<std::size_t>(r) - 1];
    };
    const double value = order_statistic(std::ceil(q * n - 1e-9));
    // Binomial order-statistic interval of +-1 standard deviation in rank.
    const double spread = std::sqrt(n * q * (1.0 - q));
    const double lo = order_statistic(std::floor(q * n - spread));
    const double hi = order_statistic(std::ceil(q * n + spread));
    return {value, 0.5 * (hi - lo)};
}

CriticalValueEstimate critical_value(const CriticalValueKey& key,
                                     const CriticalValueSettings& settings) {
    if (settings.n_paths < 1000) {
        throw Error(ErrorCode::InvalidArgument, "n_paths must be at least 1000");
    }
    const auto [value, se] = upper_quantile(simulate_sup_draws(key, settings), key.alpha);
    return {key, value, settings.n_paths, settings.n_grid, settings.seed, se};
}

std::string format_cache_record(const CriticalValueEstimate& e) {
    std::ostringstream out;
    out << e.key.dim << '\t' << format_double(e.key.gamma) << '\t' << format_double(e.key.L) << '\t'
        << format_double(e.key.alpha) << '\t' << e.n_paths << '\t' << e.n_grid << '\t' << e.seed << '\t'
        << format_double(e.value) << '\t' << format_double(e.std_error);
    return out.str();
}

CriticalValueEstimate parse_cache_record(const std::string& line, Index line_number) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, '\t')) {
        fields.push_back(field);
    }
    if (fields.size() != 9) {
        throw Error(ErrorCode::CorruptCache, "line " + std::to_string(line_number) + ": expected 9 fields, got " +
                                                 std::to_string(fields.size()));
    }
    CriticalValueEstimate e;
    e.key.dim = parse_field<Index>(fields[0], line_number, "dim");
    e.key.gamma = parse_field<double>(fields[1], line_number, "gamma");
    e.key.L = parse_field<double>(fields[2], line_number, "L");
    e.key.alpha = parse_field<double>(fields[3], line_number, "alpha");
    e.n_paths = parse_field<Index>(fields[4], line_number, "n_paths");
    e.n_grid = parse_field<Index>(fields[5], line_number, "n_grid");
    e.seed = parse_field<std::uint64_t>(fields[6], line_number, "seed");
    e.value = parse_field<double>(fields[7], line_number, "value");
    e.std_error = parse_field<double>(fields[8], line_number, "std_error");
    try {
        e.key.validate();
    } catch (const Error& err) {
        throw Error(ErrorCode::CorruptCache, "line " + std::to_string(line_number) + ": " + err.what());
    }
    return e;
}

CriticalValueCache::CriticalValueCache(std::filesystem::path path) : m_path(std::move(path)) {
    std::ifstream in(m_path);
    if (!in) {
        return;  // created on first append
    }
    std::string line;
    Index line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        m_records.push_back(parse_cache_record(line, line_number));
    }
}

std::optional<CriticalValueEstimate> CriticalValueCache::find(const CriticalValueKey& key,
                                                              const CriticalValueSettings& settings) const {
    for (const auto& record : m_records) {
        if (same_run(record, key, settings)) {
            return record;
        }
    }
    return std::nullopt;
}

void CriticalValueCache::append(const CriticalValueEstimate& estimate) {
    const bool fresh = !std::filesystem::exists(m_path) || std::filesystem::file_size(m_path) == 0;
    std::ofstream out(m_path, std::ios::app);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot open critical value cache " + m_path.string());
    }
    if (fresh) {
        out << "# dim\tgamma\tL\talpha\tn_paths\tn_grid\tseed\tvalue\tstd_error\n";
    }
    out << format_cache_record(estimate) << '\n';
    if (!out) {
        throw Error(ErrorCode::Io, "failed writing critical value cache " + m_path.string());
    }
    m_records.push_back(estimate);
}

CriticalValueEstimate critical_value_cached(const CriticalValueKey& key,
                                            const CriticalValueSettings& settings,
                                            const std::filesystem::path& cache_path) {
    CriticalValueCache cache(cache_path);
    if (auto hit = cache.find(key, settings)) {
        return *hit;
    }
    CriticalValueEstimate estimate = critical_value(key, settings);
    cache.append(estimate);
    return estimate;
}

CriticalValueTable::CriticalValueTable(CriticalValueSettings settings,
                                       std::optional<std::filesystem::path> cache_path)
    : m_settings(settings), m_cache_path(std::move(cache_path)) {}

CriticalValueEstimate CriticalValueTable::get(const CriticalValueKey& key) {
    std::lock_guard lock(m_mutex);
    for (const auto& e : m_memo) {
        if (same_run(e, key, m_settings)) {
            return e;
        }
    }
    CriticalValueEstimate estimate = m_cache_path ? critical_value_cached(key, m_settings, *m_cache_path)
                                                  : critical_value(key, m_settings);
    m_memo.push_back(estimate);
    return estimate;
}

}  // namespace excusum

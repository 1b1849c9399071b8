#pragma once

#include <excusum/expectile.hpp>
#include <excusum/random.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace excusum {

/// Identifies the limit law sup_{0<t<L} ||W_dim(t)||_inf / t^gamma and the level alpha.
struct CriticalValueKey {
    Index dim = 1;
    double gamma = 0.0;
    double L = 1.0;
    double alpha = 0.05;

    void validate() const;
    friend bool operator==(const CriticalValueKey&, const CriticalValueKey&) = default;
};

struct CriticalValueSettings {
    Index n_paths = 100000;
    Index n_grid = 10000;
    std::uint64_t seed = 0x5eed;
    unsigned workers = 1;  ///< does not affect results
};

struct CriticalValueEstimate {
    CriticalValueKey key;
    double value = 0.0;
    Index n_paths = 0;
    Index n_grid = 0;
    std::uint64_t seed = 0;
    double std_error = 0.0;
};

/// Draws the grid supremum of ||W(t_j)||_inf / t_j^gamma, t_j = j L / n_grid.
///
/// Increments are consumed coordinate-major (all n_grid increments of coordinate 0,
/// then coordinate 1, ...), so samplers of different dimension fed from the same
/// normal stream share their leading coordinates. The grid supremum is a lower
/// bound of the continuous one; the gap shrinks like sqrt(L / n_grid).
class SupWienerSampler {
public:
    SupWienerSampler(Index dim, double gamma, double L, Index n_grid);

    /// `next_normal()` must return independent standard normal variates.
    template <class NormalSource>
    double draw(NormalSource&& next_normal) {
        std::fill(m_abs_max.begin(), m_abs_max.end(), 0.0);
        for (Index c = 0; c < m_dim; ++c) {
            double w = 0.0;
            for (Index j = 0; j < m_n_grid; ++j) {
                w += m_step_sd * next_normal();
                const double a = std::abs(w);
                if (a > m_abs_max[j]) {
                    m_abs_max[j] = a;
                }
            }
        }
        double sup = 0.0;
        for (Index j = 0; j < m_n_grid; ++j) {
            sup = std::max(sup, m_abs_max[j] * m_time_weight[j]);
        }
        return sup;
    }

    [[nodiscard]] Index dim() const noexcept { return m_dim; }
    [[nodiscard]] Index n_grid() const noexcept { return m_n_grid; }

private:
    Index m_dim;
    Index m_n_grid;
    double m_step_sd;
    std::vector<double> m_time_weight;  ///< t_j^-gamma
    std::vector<double> m_abs_max;
};

template <class NormalSource>
double simulate_sup_wiener(Index dim, double gamma, double L, Index n_grid,
                           NormalSource&& next_normal) {
    SupWienerSampler sampler(dim, gamma, L, n_grid);
    return sampler.draw(std::forward<NormalSource>(next_normal));
}

/// Convenience overload drawing increments from `rng`.
double simulate_sup_wiener(Index dim, double gamma, double L, Index n_grid, Engine& rng);

/// The i.i.d. sup draws behind critical_value, path i seeded by substream(seed, i).
[[nodiscard]] std::vector<double> simulate_sup_draws(const CriticalValueKey& key,
                                                     const CriticalValueSettings& settings);

/// Empirical (1 - alpha) quantile (order statistic ceil((1 - alpha) n)) with a
/// binomial order-statistic standard error.
[[nodiscard]] CriticalValueEstimate critical_value(const CriticalValueKey& key,
                                                   const CriticalValueSettings& settings = {});

/// Quantile and standard error of already simulated draws.
[[nodiscard]] std::pair<double, double> upper_quantile(std::vector<double> draws, double alpha);

/// Tab-separated cache record: dim gamma L alpha n_paths n_grid seed value std_error.
[[nodiscard]] std::string format_cache_record(const CriticalValueEstimate& estimate);
/// Throws ErrorCode::CorruptCache naming `line_number` on malformed input.
[[nodiscard]] CriticalValueEstimate parse_cache_record(const std::string& line, Index line_number);

/// Append-only text cache. One writer at a time is assumed.
class CriticalValueCache {
public:
    explicit CriticalValueCache(std::filesystem::path path);

    [[nodiscard]] std::optional<CriticalValueEstimate> find(const CriticalValueKey& key,
                                                            const CriticalValueSettings& settings) const;
    void append(const CriticalValueEstimate& estimate);
    [[nodiscard]] const std::vector<CriticalValueEstimate>& records() const noexcept {
        return m_records;
    }

private:
    std::filesystem::path m_path;
    std::vector<CriticalValueEstimate> m_records;
};

/// Cache hit returns the stored record; otherwise computes, appends and returns.
[[nodiscard]] CriticalValueEstimate critical_value_cached(const CriticalValueKey& key,
                                                          const CriticalValueSettings& settings,
                                                          const std::filesystem::path& cache_path);

/// Thread-safe in-memory memo over critical_value, optionally backed by a cache file.
class CriticalValueTable {
public:
    explicit CriticalValueTable(CriticalValueSettings settings,
                                std::optional<std::filesystem::path> cache_path = std::nullopt);

    [[nodiscard]] CriticalValueEstimate get(const CriticalValueKey& key);
    [[nodiscard]] const CriticalValueSettings& settings() const noexcept { return m_settings; }

private:
    CriticalValueSettings m_settings;
    std::optional<std::filesystem::path> m_cache_path;
    std::mutex m_mutex;
    std::vector<CriticalValueEstimate> m_memo;
};

}  // namespace excusum

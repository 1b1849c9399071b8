#include <excusum/simulation.hpp>
#include <excusum/text.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <span>
#include <thread>

namespace excusum {
namespace {

constexpr double INF = std::numeric_limits<double>::infinity();

template <class E, std::size_t N>
E parse_named(std::string_view text, const std::array<E, N>& values, const char* what) {
    for (const E v : values) {
        if (text == to_string(v)) {
            return v;
        }
    }
    std::string expected;
    for (const E v : values) {
        expected += (expected.empty() ? "" : ", ") + std::string(to_string(v));
    }
    throw Error(ErrorCode::Parse, "unknown " + std::string(what) + " '" + std::string(text) +
                                      "' (expected " + expected + ")");
}

Eigen::VectorXd pattern_vector(Index p, std::initializer_list<double> head) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    Index j = 0;
    for (const double v : head) {
        if (j < p) {
            beta[static_cast<Eigen::Index>(j++)] = v;
        }
    }
    return beta;
}

Eigen::VectorXd effective_beta1(const ScenarioConfig& config, const Change& change) {
    return change.beta1.size() == 0 ? default_beta1(config.p) : change.beta1;
}

struct ReplicationData {
    Dataset historical;
    Eigen::VectorXd stream_y;
    Eigen::MatrixXd stream_x;
    Eigen::VectorXd historical_errors;
};

ReplicationData generate_replication(const ScenarioConfig& config, std::uint64_t seed) {
    Engine rng(seed);
    const Index n = config.m + config.T_m;
    const Eigen::MatrixXd x = generate_design(config.design, n, config.p, config.m, rng);
    const Eigen::VectorXd errors = generate_errors(config.error, n, rng);

    const Eigen::VectorXd beta0 = config.effective_beta0();
    Eigen::VectorXd y = x * beta0 + errors;
    if (const auto* change = std::get_if<Change>(&config.hypothesis)) {
        const Eigen::VectorXd beta1 = effective_beta1(config, *change);
        const Index first = config.m + change->k0;
        const auto count = static_cast<Eigen::Index>(n - first);
        y.tail(count) = x.bottomRows(count) * beta1 + errors.tail(count);
    }
    const auto m = static_cast<Eigen::Index>(config.m);
    const auto t = static_cast<Eigen::Index>(config.T_m);
    return {Dataset(y.head(m), x.topRows(m)), y.tail(t), x.bottomRows(t), errors.head(m)};
}

ExpectileIndex replication_tau(const ScenarioConfig& config, const ReplicationData& data) {
    if (config.tau_source == TauSource::Errors) {
        const Eigen::VectorXd& e = data.historical_errors;
        return estimate_tau(std::span<const double>(e.data(), static_cast<std::size_t>(e.size())));
    }
    return fit_with_estimated_tau(data.historical, config.solver).tau;
}

bool needs_selection(const ScenarioConfig& config) {
    return std::any_of(config.statistics.begin(), config.statistics.end(),
                       [](StatisticKind k) { return k != StatisticKind::Plain; });
}

template <class Job>
void parallel_for(Index count, unsigned workers, Job&& job) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<Index>(count, 1))));
    if (workers == 1) {
        for (Index i = 0; i < count; ++i) {
            job(i);
        }
        return;
    }
    std::atomic<Index> next{0};
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (Index i = next++; i < count; i = next++) {
                job(i);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
}

std::string format_k(const std::optional<Index>& k) {
    return k ? std::to_string(*k) : "inf";
}

std::string format_histogram(const std::map<Index, Index>& h) {
    std::string s;
    for (const auto& [size, count] : h) {
        s += (s.empty() ? "" : ",") + std::to_string(size) + ":" + std::to_string(count);
    }
    return s.empty() ? "-" : s;
}

std::string cell_label(const CellKey& key) {
    return "gamma=" + format_double(key.gamma) + ":" + std::string(to_string(key.statistic)) + ":" +
           std::string(to_string(key.procedure));
}

}  // namespace

std::string_view to_string(Design d) noexcept {
    return d == Design::D1 ? "D1" : "D2";
}

std::string_view to_string(ErrorLaw e) noexcept {
    return e == ErrorLaw::Gaussian ? "gaussian" : "shifted-exp";
}

std::string_view to_string(ProcedureKind p) noexcept {
    return p == ProcedureKind::Open ? "open" : "closed";
}

std::string_view to_string(TauSource t) noexcept {
    return t == TauSource::Errors ? "errors" : "residuals";
}

Design parse_design(std::string_view text) {
    return parse_named(text, std::array{Design::D1, Design::D2}, "design");
}

ErrorLaw parse_error_law(std::string_view text) {
    return parse_named(text, std::array{ErrorLaw::Gaussian, ErrorLaw::ShiftedExp}, "error law");
}

ProcedureKind parse_procedure_kind(std::string_view text) {
    return parse_named(text, std::array{ProcedureKind::Open, ProcedureKind::Closed}, "procedure");
}

TauSource parse_tau_source(std::string_view text) {
    return parse_named(text, std::array{TauSource::Errors, TauSource::Residuals}, "tau source");
}

Eigen::MatrixXd generate_design(Design design, Index rows, Index p, Index m, Engine& rng) {
    if (p < 1) {
        throw Error(ErrorCode::InvalidArgument, "design needs p >= 1");
    }
    if (design == Design::D2 && m < 1) {
        throw Error(ErrorCode::InvalidArgument, "design D2 needs m >= 1");
    }
    NormalDistribution normal;
    Eigen::MatrixXd x(rows, p);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < p; ++j) {
            const double z = normal(rng);
            double v = 0.0;
            switch (j + 1) {
            case 3:
                v = 2.0 + z;
                break;
            case 5:
                v = 1.0 + z;
                break;
            case 7:
                v = -1.0 + z;
                break;
            case 9:
                v = (1.0 + z) * (1.0 + z);
                break;
            default:
                if (design == Design::D1) {
                    v = z;
                } else {
                    const auto col = static_cast<double>(j + 1);
                    v = z * z + col * col / static_cast<double>(m);
                }
            }
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return x;
}

Eigen::VectorXd generate_errors(ErrorLaw law, Index n, Engine& rng) {
    Eigen::VectorXd e(static_cast<Eigen::Index>(n));
    if (law == ErrorLaw::Gaussian) {
        NormalDistribution normal;
        for (auto& v : e) {
            v = normal(rng);
        }
    } else {
        ExponentialDistribution expo(1.0);
        for (auto& v : e) {
            v = expo(rng) - 1.5;
        }
    }
    return e;
}

Eigen::VectorXd default_beta0(Index p) {
    return pattern_vector(p, {2.0, 2.0, 1.0});
}

Eigen::VectorXd default_beta1(Index p) {
    return pattern_vector(p, {-2.0, 2.0, 1.0});
}

void ScenarioConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
    if (m < 2) {
        fail("m must be at least 2");
    }
    if (p < 1 || p > m) {
        fail("p must satisfy 1 <= p <= m");
    }
    if (T_m < 1) {
        fail("T_m must be at least 1");
    }
    if (beta0.size() != 0 && beta0.size() != static_cast<Eigen::Index>(p)) {
        fail("beta0 must have p entries");
    }
    if (const auto* change = std::get_if<Change>(&hypothesis)) {
        if (change->k0 < 1 || change->k0 > T_m) {
            fail("change point k0 must satisfy 1 <= k0 <= T_m");
        }
        if (change->beta1.size() != 0 && change->beta1.size() != static_cast<Eigen::Index>(p)) {
            fail("beta1 must have p entries");
        }
    }
    if (gamma_list.empty()) {
        fail("gamma list is empty");
    }
    for (const double g : gamma_list) {
        if (!(g >= 0.0 && g < 0.5)) {
            fail("every gamma must lie in [0, 0.5)");
        }
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        fail("alpha must lie in (0, 1)");
    }
    if (procedures.empty() || statistics.empty()) {
        fail("at least one procedure and one statistic are required");
    }
    if (replications < 1) {
        fail("replications must be at least 1");
    }
    if (workers < 1) {
        fail("workers must be at least 1");
    }
    penalty().validate();
    if (critical_value_override && std::isnan(*critical_value_override)) {
        fail("critical value override is NaN");
    }
}

Eigen::VectorXd ScenarioConfig::effective_beta0() const {
    return beta0.size() == 0 ? default_beta0(p) : beta0;
}

IndexSet ScenarioConfig::true_support() const {
    const Eigen::VectorXd b = effective_beta0();
    IndexSet support;
    for (Index j = 0; j < p; ++j) {
        if (b[static_cast<Eigen::Index>(j)] != 0.0) {
            support.push_back(j);
        }
    }
    return support;
}

PenaltyConfig ScenarioConfig::penalty() const {
    PenaltyConfig pen = PenaltyConfig::for_sample_size(m, lambda_exponent, phi);
    if (lambda) {
        pen.lambda = *lambda;
    }
    return pen;
}

Procedure ScenarioConfig::procedure(ProcedureKind kind) const {
    if (kind == ProcedureKind::Open) {
        return OpenEnd{};
    }
    return ClosedEnd{static_cast<double>(T_m) / static_cast<double>(m), T_m};
}

std::vector<CellKey> cell_keys(const ScenarioConfig& config) {
    std::vector<CellKey> keys;
    for (const double g : config.gamma_list) {
        for (const StatisticKind s : config.statistics) {
            for (const ProcedureKind p : config.procedures) {
                keys.push_back({g, s, p});
            }
        }
    }
    return keys;
}

ReplicationResult run_replication(const ScenarioConfig& config, Index rep, CriticalValueTable& table) {
    const std::vector<CellKey> keys = cell_keys(config);
    ReplicationResult result;
    result.rep = rep;
    result.seed = substream_seed(config.master_seed, rep);
    result.cells.resize(keys.size());

    auto fail_all = [&](ErrorCode code) {
        for (auto& cell : result.cells) {
            cell.failure = code;
        }
        return result;
    };

    const ReplicationData data = generate_replication(config, result.seed);
    std::optional<ExpectileFit> pilot;
    std::optional<AdaptiveLassoFit> selection;
    try {
        const ExpectileIndex tau = replication_tau(config, data);
        result.tau = tau.value();
        pilot = fit_expectile(data.historical, tau, config.solver);
        if (needs_selection(config)) {
            selection = fit_adaptive_lasso_expectile(data.historical, tau, config.penalty(), *pilot,
                                                     config.solver);
            result.active_set = selection->active_set;
        }
    } catch (const Error& e) {
        return fail_all(e.code());
    }

    std::map<StatisticKind, std::variant<MonitorReference, ErrorCode>> references;
    for (const StatisticKind kind : config.statistics) {
        try {
            switch (kind) {
            case StatisticKind::Plain:
                references.emplace(kind, plain_reference(*pilot));
                break;
            case StatisticKind::Adaptive:
                references.emplace(kind, adaptive_reference(*selection));
                break;
            case StatisticKind::Modified: {
                const ExpectileFit refit =
                    modified_refit(data.historical, pilot->tau, *selection, config.solver);
                references.emplace(kind, modified_reference(refit, *selection));
                break;
            }
            case StatisticKind::OracleSet:
                references.emplace(kind, oracle_reference(*selection, config.true_support()));
                break;
            }
        } catch (const Error& e) {
            references.emplace(kind, e.code());
        }
    }

    for (std::size_t c = 0; c < keys.size(); ++c) {
        CellOutcome& cell = result.cells[c];
        const auto& ref = references.at(keys[c].statistic);
        if (const auto* code = std::get_if<ErrorCode>(&ref)) {
            cell.failure = *code;
            continue;
        }
        const MonitorReference& reference = std::get<MonitorReference>(ref);
        const MonitorConfig mc{keys[c].gamma, config.alpha, config.procedure(keys[c].procedure)};
        cell.dim = reference.indices.size();
        try {
            cell.critical_value =
                config.critical_value_override
                    ? *config.critical_value_override
                    : table.get({cell.dim, keys[c].gamma, boundary_length(mc.procedure), config.alpha}).value;
            Monitor monitor = start_monitor(reference, data.historical, mc, cell.critical_value);
            const MonitorOutcome outcome = run_monitor(monitor, data.stream_y, data.stream_x);
            cell.k_hat = outcome.k_hat;
            cell.sup_statistic = outcome.trajectory.empty() ? 0.0 : sup_statistic(outcome.trajectory);
        } catch (const Error& e) {
            cell.failure = e.code();
        }
    }
    return result;
}

ReplicationResult run_replication(const ScenarioConfig& config, Index rep) {
    CriticalValueTable table(config.critval, config.critval_cache);
    return run_replication(config, rep, table);
}

StoppingSummary summarize_stopping(const std::vector<std::optional<Index>>& k_hats) {
    StoppingSummary s;
    if (k_hats.empty()) {
        s.min = s.median = s.max = INF;
        return s;
    }
    std::vector<double> v;
    v.reserve(k_hats.size());
    for (const auto& k : k_hats) {
        v.push_back(k ? static_cast<double>(*k) : INF);
        s.count_infinite += k ? 0 : 1;
    }
    std::sort(v.begin(), v.end());
    s.min = v.front();
    s.max = v.back();
    const std::size_t n = v.size();
    if (n % 2 == 1) {
        s.median = v[n / 2];
    } else {
        const double a = v[n / 2 - 1];
        const double b = v[n / 2];
        s.median = std::isinf(a) || std::isinf(b) ? INF : 0.5 * (a + b);
    }
    return s;
}

ExperimentReport run_experiment(const ScenarioConfig& config) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    CriticalValueTable table(config.critval, config.critval_cache);

    ExperimentReport report;
    report.config = config;
    report.replications.resize(config.replications);
    parallel_for(config.replications, config.workers,
                 [&](Index rep) { report.replications[rep] = run_replication(config, rep, table); });

    const std::vector<CellKey> keys = cell_keys(config);
    const IndexSet truth = config.true_support();
    for (std::size_t c = 0; c < keys.size(); ++c) {
        CellReport cell;
        cell.key = keys[c];
        std::vector<std::optional<Index>> k_hats;
        for (const auto& r : report.replications) {
            const CellOutcome& o = r.cells[c];
            if (o.failure) {
                ++cell.failures;
                continue;
            }
            k_hats.push_back(o.k_hat);
            ++cell.dimension_histogram[o.dim];
        }
        cell.completed = k_hats.size();
        cell.stopping = summarize_stopping(k_hats);
        cell.rejection_rate =
            cell.completed == 0
                ? 0.0
                : static_cast<double>(cell.completed - cell.stopping.count_infinite) /
                      static_cast<double>(cell.completed);
        report.cells.push_back(std::move(cell));
    }
    if (needs_selection(config)) {
        for (const auto& r : report.replications) {
            if (!r.active_set) {
                ++report.selection_failures;
                continue;
            }
            ++report.selection_histogram[r.active_set->size()];
            report.exact_recovery += *r.active_set == truth ? 1 : 0;
        }
    }
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

Index SelectionStudy::mode() const {
    Index best = 0;
    Index best_count = 0;
    for (const auto& [size, count] : histogram) {
        if (count > best_count) {
            best = size;
            best_count = count;
        }
    }
    return best;
}

SelectionStudy selection_study(const ScenarioConfig& config) {
    config.validate();
    const IndexSet truth = config.true_support();
    std::vector<std::optional<IndexSet>> sets(config.replications);
    parallel_for(config.replications, config.workers, [&](Index rep) {
        const ReplicationData data = generate_replication(config, substream_seed(config.master_seed, rep));
        try {
            const ExpectileIndex tau = replication_tau(config, data);
            const ExpectileFit pilot = fit_expectile(data.historical, tau, config.solver);
            sets[rep] = fit_adaptive_lasso_expectile(data.historical, tau, config.penalty(), pilot,
                                                     config.solver)
                            .active_set;
        } catch (const Error&) {
            sets[rep].reset();
        }
    });
    SelectionStudy study;
    study.replications = config.replications;
    for (const auto& s : sets) {
        if (!s) {
            ++study.failures;
            continue;
        }
        ++study.histogram[s->size()];
        study.exact_recovery += *s == truth ? 1 : 0;
    }
    return study;
}

void write_cells_tsv(const ExperimentReport& report, std::ostream& out) {
    out << "gamma\tstatistic\tprocedure\tcompleted\tfailures\trejection_rate\tk_min\tk_median\tk_max\t"
           "count_infinite\tdimensions\n";
    for (const CellReport& c : report.cells) {
        out << format_double(c.key.gamma) << '\t' << to_string(c.key.statistic) << '\t'
            << to_string(c.key.procedure) << '\t' << c.completed << '\t' << c.failures << '\t'
            << format_double(c.rejection_rate) << '\t' << format_double(c.stopping.min) << '\t'
            << format_double(c.stopping.median) << '\t' << format_double(c.stopping.max) << '\t'
            << c.stopping.count_infinite << '\t' << format_histogram(c.dimension_histogram) << '\n';
    }
}

void write_replications_tsv(const ExperimentReport& report, std::ostream& out) {
    const std::vector<CellKey> keys = cell_keys(report.config);
    out << "rep\tseed\ttau\tselected";
    for (const CellKey& k : keys) {
        out << "\tk_hat:" << cell_label(k) << "\tsup:" << cell_label(k);
    }
    out << '\n';
    for (const ReplicationResult& r : report.replications) {
        out << r.rep << '\t' << r.seed << '\t' << format_double(r.tau) << '\t';
        if (r.active_set) {
            std::string s;
            for (const Index j : *r.active_set) {
                s += (s.empty() ? "" : ",") + std::to_string(j + 1);
            }
            out << '{' << s << '}';
        } else {
            out << '-';
        }
        for (const CellOutcome& c : r.cells) {
            if (c.failure) {
                out << "\tfail:" << to_string(*c.failure) << "\t-";
            } else {
                out << '\t' << format_k(c.k_hat) << '\t' << format_double(c.sup_statistic);
            }
        }
        out << '\n';
    }
}

void write_selection_tsv(const ExperimentReport& report, std::ostream& out) {
    out << "selected_size\tcount\n";
    for (const auto& [size, count] : report.selection_histogram) {
        out << size << '\t' << count << '\n';
    }
}

void write_summary(const ExperimentReport& report, std::ostream& out, bool include_timing) {
    const ScenarioConfig& c = report.config;
    out << "design=" << to_string(c.design) << '\n'
        << "error=" << to_string(c.error) << '\n'
        << "m=" << c.m << '\n'
        << "p=" << c.p << '\n'
        << "T_m=" << c.T_m << '\n';
    if (const auto* change = std::get_if<Change>(&c.hypothesis)) {
        out << "hypothesis=H1\nk0=" << change->k0 << '\n';
    } else {
        out << "hypothesis=H0\n";
    }
    out << "alpha=" << format_double(c.alpha) << '\n'
        << "replications=" << c.replications << '\n'
        << "master_seed=" << c.master_seed << '\n'
        << "tau_source=" << to_string(c.tau_source) << '\n'
        << "lambda=" << format_double(c.penalty().lambda) << '\n'
        << "phi=" << format_double(c.phi) << '\n'
        << "critval_n_paths=" << c.critval.n_paths << '\n'
        << "critval_n_grid=" << c.critval.n_grid << '\n'
        << "critval_seed=" << c.critval.seed << '\n';
    if (!report.selection_histogram.empty() || report.selection_failures > 0) {
        out << "selection_histogram=" << format_histogram(report.selection_histogram) << '\n'
            << "exact_recovery=" << report.exact_recovery << '\n'
            << "selection_failures=" << report.selection_failures << '\n';
    }
    for (const CellReport& cell : report.cells) {
        const std::string prefix = "cell." + cell_label(cell.key) + ".";
        out << prefix << "rejection_rate=" << format_double(cell.rejection_rate) << '\n'
            << prefix << "completed=" << cell.completed << '\n'
            << prefix << "failures=" << cell.failures << '\n'
            << prefix << "k_median=" << format_double(cell.stopping.median) << '\n';
    }
    if (include_timing) {
        out << "wall_time_seconds=" << format_double(report.wall_time) << '\n';
    }
}

}  // namespace excusum

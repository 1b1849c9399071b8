#include <excusum/cli.hpp>
#include <excusum/config.hpp>
#include <excusum/csv.hpp>
#include <excusum/text.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace excusum {
namespace {

using FlagValues = std::map<std::string, std::optional<std::string>>;

struct DataFlags {
    std::string data;
    std::string stream;
    std::string response;
    std::string features;
    bool no_header = false;
    std::string delimiter = ",";
};

char parse_delimiter(const std::string& text) {
    if (text == "tab" || text == "\\t" || text == "\t") {
        return '\t';
    }
    if (text.size() != 1) {
        throw Error(ErrorCode::Parse, "delimiter must be a single character or 'tab'");
    }
    return text[0];
}

CsvSchema make_schema(const DataFlags& flags) {
    CsvSchema schema;
    schema.response = flags.response;
    schema.features = split_list(flags.features);
    schema.has_header = !flags.no_header;
    schema.delimiter = parse_delimiter(flags.delimiter);
    return schema;
}

void add_data_options(CLI::App& cmd, DataFlags& flags, const char* data_help) {
    cmd.add_option("--data", flags.data, data_help)->required();
    cmd.add_option("--response", flags.response, "Response column (name, or 1-based number with --no-header)")
        ->required();
    cmd.add_option("--features", flags.features, "Comma separated feature columns (default: all others)");
    cmd.add_flag("--no-header", flags.no_header, "The CSV has no header row");
    cmd.add_option("--delimiter", flags.delimiter, "Field delimiter (default ',')");
}

void add_flag_value(CLI::App& cmd, FlagValues& values, const std::string& flag, const std::string& key,
                    const std::string& help) {
    cmd.add_option(flag, values[key], help);
}

void add_estimation_options(CLI::App& cmd, FlagValues& values) {
    add_flag_value(cmd, values, "--m", "m", "Historical rows: the first m rows of the data");
    add_flag_value(cmd, values, "--tau", "tau", "Expectile index in (0,1), or 'auto' to estimate it");
    add_flag_value(cmd, values, "--lambda-exponent", "lambda_exponent", "Penalty lambda = m^exponent");
    add_flag_value(cmd, values, "--phi", "phi", "Adaptive weight power");
    add_flag_value(cmd, values, "--lambda", "lambda", "Penalty level, overrides --lambda-exponent");
}

void add_critval_options(CLI::App& cmd, FlagValues& values) {
    add_flag_value(cmd, values, "--n-paths", "critval_n_paths", "Monte Carlo paths");
    add_flag_value(cmd, values, "--n-grid", "critval_n_grid", "Grid points per path");
    add_flag_value(cmd, values, "--seed", "critval_seed", "Master seed of the simulation");
    add_flag_value(cmd, values, "--workers", "critval_workers", "Worker threads");
    add_flag_value(cmd, values, "--cache", "critval_cache",
                   std::string("Cache file (default: $") + CRITVAL_CACHE_ENV + ")");
}

RunConfig load_run_config(const std::string& config_path, const FlagValues& flags) {
    RunConfig config;
    if (!config_path.empty()) {
        apply_run_config(config, read_key_values(config_path));
    }
    std::vector<ConfigEntry> overrides;
    for (const auto& [key, value] : flags) {
        if (value) {
            overrides.push_back({key, *value, 0});
        }
    }
    apply_run_config(config, overrides);
    if (!config.critval_cache) {
        if (const char* env = std::getenv(CRITVAL_CACHE_ENV); env != nullptr && *env != '\0') {
            config.critval_cache = std::filesystem::path(env);
        }
    }
    return config;
}

std::string format_set(const IndexSet& set) {
    std::string out = "{";
    for (std::size_t i = 0; i < set.size(); ++i) {
        out += (i ? "," : "") + std::to_string(set[i] + 1);
    }
    return out + "}";
}

std::string format_names(const IndexSet& set, const std::vector<std::string>& names) {
    std::string out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        out += (i ? "," : "") + names[set[i]];
    }
    return out;
}

Index historical_rows(const RunConfig& config, Index available) {
    const Index m = config.m.value_or(available);
    if (m == 0 || m > available) {
        throw Error(ErrorCode::InvalidArgument, "m = " + std::to_string(m) + " must lie in [1, " +
                                                    std::to_string(available) + "]");
    }
    return m;
}

struct BaseFit {
    ExpectileFit fit;
    bool estimated = false;
    Index outer_iterations = 0;
};

BaseFit base_fit(const Dataset& historical, const RunConfig& config) {
    if (config.tau) {
        return {fit_expectile(historical, ExpectileIndex(*config.tau)), false, 0};
    }
    EstimatedTauFit est = fit_with_estimated_tau(historical);
    if (!est.converged) {
        throw Error(ErrorCode::NotConverged, "expectile index estimation did not converge");
    }
    return {std::move(est.fit), true, est.outer_iterations};
}

void print_base(std::ostream& out, const BaseFit& base, Index m) {
    out << "historical_rows\t" << m << '\n';
    out << "tau\t" << format_double(base.fit.tau.value()) << '\n';
    out << "tau_source\t" << (base.estimated ? "estimated" : "fixed") << '\n';
    if (base.estimated) {
        out << "tau_rounds\t" << base.outer_iterations << '\n';
    }
}

void require_converged(const ExpectileFit& fit) {
    if (!fit.converged) {
        throw Error(ErrorCode::NotConverged, "expectile fit did not converge in " +
                                                 std::to_string(fit.iterations) + " iterations");
    }
}

int cmd_fit(const DataFlags& data, const std::string& config_path, const FlagValues& flags, std::ostream& out) {
    const RunConfig config = load_run_config(config_path, flags);
    const CsvData csv = read_csv_dataset(data.data, make_schema(data));
    const Index m = historical_rows(config, csv.data.n());
    const BaseFit base = base_fit(csv.data.rows(0, m), config);
    print_base(out, base, m);
    out << "iterations\t" << base.fit.iterations << '\n';
    out << "converged\t" << (base.fit.converged ? "true" : "false") << '\n';
    out << "stationarity_gap\t" << format_double(base.fit.stationarity_gap) << '\n';
    for (Index j = 0; j < csv.columns.feature_names.size(); ++j) {
        out << "coefficient\t" << csv.columns.feature_names[j] << '\t'
            << format_double(base.fit.beta[static_cast<Eigen::Index>(j)]) << '\n';
    }
    require_converged(base.fit);
    return EXIT_OK;
}

AdaptiveLassoFit select(const Dataset& historical, const BaseFit& base, const RunConfig& config, Index m) {
    return fit_adaptive_lasso_expectile(historical, base.fit.tau, config.penalty(m), base.fit);
}

int cmd_select(const DataFlags& data, const std::string& config_path, const FlagValues& flags,
               std::ostream& out, std::ostream& err) {
    const RunConfig config = load_run_config(config_path, flags);
    const CsvData csv = read_csv_dataset(data.data, make_schema(data));
    const Index m = historical_rows(config, csv.data.n());
    const Dataset historical = csv.data.rows(0, m);
    const BaseFit base = base_fit(historical, config);
    require_converged(base.fit);
    const AdaptiveLassoFit lasso = select(historical, base, config, m);
    print_base(out, base, m);
    out << "lambda\t" << format_double(lasso.penalty.lambda) << '\n';
    out << "phi\t" << format_double(lasso.penalty.phi) << '\n';
    out << "iterations\t" << lasso.iterations << '\n';
    out << "converged\t" << (lasso.converged ? "true" : "false") << '\n';
    out << "selected\t" << format_set(lasso.active_set) << '\n';
    out << "selected_names\t" << format_names(lasso.active_set, csv.columns.feature_names) << '\n';
    for (Index j = 0; j < csv.columns.feature_names.size(); ++j) {
        out << "coefficient\t" << csv.columns.feature_names[j] << '\t'
            << format_double(lasso.beta_star[static_cast<Eigen::Index>(j)]) << '\n';
    }
    if (lasso.active_set.empty()) {
        err << "warning: no covariate was selected; monitoring with the adaptive or modified statistic is impossible\n";
    }
    if (!lasso.converged) {
        throw Error(ErrorCode::NotConverged, "adaptive LASSO fit did not converge");
    }
    return EXIT_OK;
}

MonitorReference build_reference(const Dataset& historical, const BaseFit& base, const RunConfig& config,
                                 Index m, const std::vector<std::string>& names) {
    if (config.statistic == StatisticKind::Plain) {
        return plain_reference(base.fit);
    }
    const AdaptiveLassoFit lasso = select(historical, base, config, m);
    switch (config.statistic) {
    case StatisticKind::Adaptive:
        return adaptive_reference(lasso);
    case StatisticKind::Modified:
        if (lasso.active_set.empty()) {
            throw Error(ErrorCode::EmptySelection, "no covariate was selected");
        }
        return modified_reference(modified_refit(historical, base.fit.tau, lasso), lasso);
    case StatisticKind::OracleSet: {
        if (config.oracle_set.empty()) {
            throw Error(ErrorCode::InvalidArgument, "the oracle statistic needs --oracle-set");
        }
        IndexSet indices;
        for (const std::string& name : config.oracle_set) {
            const auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) {
                throw Error(ErrorCode::InvalidArgument, "oracle column '" + name + "' is not a feature");
            }
            indices.push_back(static_cast<Index>(it - names.begin()));
        }
        std::sort(indices.begin(), indices.end());
        indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
        return oracle_reference(lasso, std::move(indices));
    }
    case StatisticKind::Plain:
        break;
    }
    return plain_reference(base.fit);
}

CriticalValueEstimate lookup_critical_value(const CriticalValueKey& key, const RunConfig& config) {
    if (config.critval_cache) {
        return critical_value_cached(key, config.critval, *config.critval_cache);
    }
    return critical_value(key, config.critval);
}

int cmd_monitor(const DataFlags& data, const std::string& config_path, const FlagValues& flags,
                const std::optional<std::string>& critical_override, bool trace, std::ostream& out,
                std::istream& in) {
    const RunConfig config = load_run_config(config_path, flags);
    const CsvSchema schema = make_schema(data);
    const CsvData csv = read_csv_dataset(data.data, schema);
    const bool same_file = data.stream.empty();
    if (same_file && !config.m) {
        throw Error(ErrorCode::InvalidArgument, "--m is required when the stream follows the history in --data");
    }
    const Index m = historical_rows(config, csv.data.n());
    const Dataset historical = csv.data.rows(0, m);
    const BaseFit base = base_fit(historical, config);
    require_converged(base.fit);
    MonitorReference reference = build_reference(historical, base, config, m, csv.columns.feature_names);
    const MonitorConfig monitor_config = config.monitor_config(m);
    const IndexSet monitored = reference.indices;

    std::optional<Monitor> monitor;
    double critical = 0.0;
    std::optional<double> critical_se;
    if (critical_override) {
        critical = parse_real(*critical_override, "critical_value");
        monitor.emplace(start_monitor(std::move(reference), historical, monitor_config, critical));
    } else {
        const CriticalValueKey key{monitored.size(), monitor_config.gamma,
                                   boundary_length(monitor_config.procedure), monitor_config.alpha};
        const CriticalValueEstimate estimate = lookup_critical_value(key, config);
        critical = estimate.value;
        critical_se = estimate.std_error;
        monitor.emplace(start_monitor(std::move(reference), historical, monitor_config, estimate));
    }

    print_base(out, base, m);
    out << "statistic\t" << to_string(config.statistic) << '\n';
    out << "monitored\t" << format_set(monitored) << '\n';
    out << "monitored_names\t" << format_names(monitored, csv.columns.feature_names) << '\n';
    out << "dimension\t" << monitored.size() << '\n';
    out << "critical_value\t" << format_double(critical) << '\n';
    if (critical_se) {
        out << "critical_value_se\t" << format_double(*critical_se) << '\n';
    }

    const auto consume = [&](double y, const std::vector<double>& x) {
        const double value = monitor->step(y, std::span<const double>(x));
        if (trace) {
            out << "trace\t" << monitor->k() << '\t' << format_double(value) << '\n';
        }
        return monitor->running();
    };

    std::vector<double> x(static_cast<std::size_t>(csv.data.p()));
    if (same_file) {
        for (Index i = m; i < csv.data.n(); ++i) {
            for (Index j = 0; j < csv.data.p(); ++j) {
                x[j] = csv.data.x()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
            if (!consume(csv.data.y()[static_cast<Eigen::Index>(i)], x)) {
                break;
            }
        }
    } else {
        std::ifstream file;
        std::istream* source = &in;
        if (data.stream != "-") {
            file.open(data.stream);
            if (!file) {
                throw Error(ErrorCode::Io, "cannot open '" + data.stream + "'");
            }
            source = &file;
        }
        CsvReader reader(*source, schema.delimiter);
        std::optional<ColumnMap> columns;
        if (!schema.has_header) {
            std::vector<std::string> header;
            for (Index j = 0; j < csv.columns.width; ++j) {
                header.push_back(std::to_string(j + 1));
            }
            columns = resolve_columns(schema, header);
        }
        double y = 0.0;
        while (auto record = reader.next()) {
            if (!columns) {
                columns = resolve_columns(schema, *record);
                if (columns->feature_names != csv.columns.feature_names) {
                    throw Error(ErrorCode::Parse, "stream features do not match the historical features");
                }
                continue;
            }
            parse_row(*record, *columns, reader.record_line(), y, x);
            if (!consume(y, x)) {
                break;
            }
        }
    }

    out << "observations\t" << monitor->k() << '\n';
    if (const auto* alarm = std::get_if<Alarm>(&monitor->status())) {
        out << "result\talarm\n";
        out << "k_hat\t" << alarm->k_hat << '\n';
        out << "row\t" << m + alarm->k_hat << '\n';
    } else {
        out << "result\tno change\n";
        out << "k_hat\tinf\n";
    }
    return EXIT_OK;
}

struct CritvalFlags {
    std::string dims = "1";
    std::string gammas = "0";
    std::string lengths;
    std::string horizons;
    std::string alphas = "0.05";
    bool no_cache = false;
};

int cmd_critvals(const CritvalFlags& flags, const std::string& config_path, const FlagValues& values,
                 std::ostream& out) {
    RunConfig config = load_run_config(config_path, values);
    if (flags.no_cache) {
        config.critval_cache.reset();
    }
    if (!flags.lengths.empty() && !flags.horizons.empty()) {
        throw Error(ErrorCode::InvalidArgument, "--L and --T are mutually exclusive");
    }
    std::vector<double> lengths;
    if (!flags.horizons.empty()) {
        for (const std::string& t : split_list(flags.horizons)) {
            const double T = parse_real(t, "T");
            lengths.push_back(boundary_length(ClosedEnd{T, 1}));
        }
    } else {
        for (const std::string& l : split_list(flags.lengths.empty() ? "1" : flags.lengths)) {
            lengths.push_back(parse_real(l, "L"));
        }
    }
    out << "dim\tgamma\tL\talpha\tvalue\tstd_error\tn_paths\tn_grid\tseed\n";
    for (const std::string& d : split_list(flags.dims)) {
        const Index dim = parse_count(d, "dim");
        for (const std::string& g : split_list(flags.gammas)) {
            const double gamma = parse_real(g, "gamma");
            for (const double L : lengths) {
                for (const std::string& a : split_list(flags.alphas)) {
                    const CriticalValueKey key{dim, gamma, L, parse_real(a, "alpha")};
                    const CriticalValueEstimate e = lookup_critical_value(key, config);
                    out << dim << '\t' << format_double(gamma) << '\t' << format_double(L) << '\t'
                        << format_double(key.alpha) << '\t' << format_double(e.value) << '\t'
                        << format_double(e.std_error) << '\t' << e.n_paths << '\t' << e.n_grid << '\t'
                        << e.seed << '\n';
                }
            }
        }
    }
    return EXIT_OK;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream file(path, std::ios::binary);
    if (!file || !(file << content) || !file.flush()) {
        throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    }
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 const std::optional<unsigned>& workers, std::ostream& out) {
    ScenarioConfig config = scenario_from_entries(read_key_values(config_path));
    if (workers) {
        config.workers = *workers;
    }
    if (!config.critval_cache) {
        if (const char* env = std::getenv(CRITVAL_CACHE_ENV); env != nullptr && *env != '\0') {
            config.critval_cache = std::filesystem::path(env);
        }
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw Error(ErrorCode::Io, "cannot create '" + out_dir + "': " + ec.message());
    }
    const ExperimentReport report = run_experiment(config);
    const std::filesystem::path dir(out_dir);
    std::ostringstream cells, reps, selection, summary;
    write_cells_tsv(report, cells);
    write_replications_tsv(report, reps);
    write_selection_tsv(report, selection);
    write_summary(report, summary, true);
    write_file(dir / "cells.tsv", cells.str());
    write_file(dir / "replications.tsv", reps.str());
    write_file(dir / "selection.tsv", selection.str());
    write_file(dir / "summary.txt", summary.str());
    out << cells.str();
    return EXIT_OK;
}

}  // namespace

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::CorruptCache:
    case ErrorCode::Parse:
    case ErrorCode::Io:
        return EXIT_INPUT;
    case ErrorCode::EmptySelection:
        return EXIT_SELECTION;
    case ErrorCode::RankDeficient:
    case ErrorCode::NotConverged:
    case ErrorCode::Degenerate:
    case ErrorCode::SingularInformation:
    case ErrorCode::ZeroScoreVariance:
    case ErrorCode::StepAfterStop:
        return EXIT_NUMERIC;
    }
    return EXIT_NUMERIC;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in) {
    CLI::App app{"Sequential change-point monitoring with expectile CUSUM statistics", "excusum"};
    app.require_subcommand(1);

    std::string config_path;
    FlagValues fit_flags, select_flags, monitor_flags, critval_flags;
    DataFlags fit_data, select_data, monitor_data;

    CLI::App* fit = app.add_subcommand("fit", "Expectile regression on the historical rows");
    add_data_options(*fit, fit_data, "CSV file");
    fit->add_option("--config", config_path, "key=value run configuration");
    add_estimation_options(*fit, fit_flags);

    CLI::App* sel = app.add_subcommand("select", "Adaptive LASSO expectile selection on the historical rows");
    add_data_options(*sel, select_data, "CSV file");
    sel->add_option("--config", config_path, "key=value run configuration");
    add_estimation_options(*sel, select_flags);

    CLI::App* mon = app.add_subcommand("monitor", "Sequential monitoring of a stream against the historical fit");
    add_data_options(*mon, monitor_data, "Historical CSV (followed by the stream unless --stream is given)");
    mon->add_option("--stream", monitor_data.stream, "Stream CSV, or '-' for standard input");
    mon->add_option("--config", config_path, "key=value run configuration");
    add_estimation_options(*mon, monitor_flags);
    add_flag_value(*mon, monitor_flags, "--gamma", "gamma", "Boundary exponent in [0, 0.5)");
    add_flag_value(*mon, monitor_flags, "--alpha", "alpha", "Nominal level");
    add_flag_value(*mon, monitor_flags, "--procedure", "procedure", "open or closed");
    add_flag_value(*mon, monitor_flags, "--T-m", "T_m", "Monitoring budget of the closed-end procedure");
    add_flag_value(*mon, monitor_flags, "--statistic", "statistic", "plain, adaptive, modified or oracle");
    add_flag_value(*mon, monitor_flags, "--oracle-set", "oracle_set", "Comma separated columns for the oracle statistic");
    add_critval_options(*mon, monitor_flags);
    std::optional<std::string> critical_override;
    mon->add_option("--critical-value", critical_override, "Use this critical value instead of simulating one");
    bool trace = false;
    mon->add_flag("--trace", trace, "Print the statistic after every observation");

    CLI::App* cv = app.add_subcommand("critvals", "Tabulate simulated critical values");
    CritvalFlags cv_flags;
    cv->add_option("--dim", cv_flags.dims, "Comma separated dimensions (default 1)");
    cv->add_option("--gamma", cv_flags.gammas, "Comma separated boundary exponents (default 0)");
    cv->add_option("--L", cv_flags.lengths, "Comma separated interval lengths (default 1)");
    cv->add_option("--T", cv_flags.horizons, "Comma separated closed-end horizons T, giving L = T/(1+T)");
    cv->add_option("--alpha", cv_flags.alphas, "Comma separated levels (default 0.05)");
    cv->add_option("--config", config_path, "key=value run configuration");
    add_critval_options(*cv, critval_flags);
    cv->add_flag("--no-cache", cv_flags.no_cache, "Ignore any configured cache");

    CLI::App* sim = app.add_subcommand("simulate", "Run a simulation study from a scenario file");
    std::string scenario_path;
    std::string out_dir = ".";
    std::optional<unsigned> sim_workers;
    sim->add_option("--config", scenario_path, "Scenario key=value file")->required();
    sim->add_option("--out", out_dir, "Output directory (default '.')");
    sim->add_option("--workers", sim_workers, "Worker threads (does not change results)");

    std::vector<std::string> argv_storage{"excusum"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const std::string& a : argv_storage) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? EXIT_OK : EXIT_INPUT;
    }

    try {
        if (fit->parsed()) {
            return cmd_fit(fit_data, config_path, fit_flags, out);
        }
        if (sel->parsed()) {
            return cmd_select(select_data, config_path, select_flags, out, err);
        }
        if (mon->parsed()) {
            return cmd_monitor(monitor_data, config_path, monitor_flags, critical_override, trace, out, in);
        }
        if (cv->parsed()) {
            return cmd_critvals(cv_flags, config_path, critval_flags, out);
        }
        if (sim->parsed()) {
            return cmd_simulate(scenario_path, out_dir, sim_workers, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return EXIT_NUMERIC;
    }
    return EXIT_INPUT;
}

}  // namespace excusum

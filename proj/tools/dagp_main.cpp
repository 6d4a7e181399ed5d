#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dagp/analysis.hpp"
#include "dagp/errors.hpp"
#include "dagp/graph.hpp"
#include "dagp/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRunFailure = 3;

int execute(const dagp::ExperimentConfig& config) {
    const dagp::RunArtifacts artifacts = dagp::run_experiment(config);
    for (const auto& file : artifacts.files) {
        std::cout << "wrote " << file << "\n";
    }
    std::cout << artifacts.summary;
    return artifacts.passed ? kOk : kRunFailure;
}

int run_verb(const std::string& config_path) {
    return execute(dagp::load_config(config_path));
}

int scan_verb(const std::string& config_path) {
    dagp::ExperimentConfig config = dagp::load_config(config_path);
    if (config.experiment.empty()) config.experiment = "param_scan";
    if (config.experiment != "param_scan") {
        throw dagp::ConfigError(
            "experiment: scan requires param_scan, got '" +
            config.experiment + "'");
    }
    return execute(config);
}

int check_params_verb(const std::string& config_path) {
    dagp::ExperimentConfig config = dagp::load_config(config_path);
    const int m = config.nodes > 0 ? config.nodes : 4;
    const double mu = config.mu > 0.0 ? config.mu : 1e-2;
    const double rho = config.rho > 0.0 ? config.rho : 1e-6;
    const double alpha = config.alpha > 0.0 ? config.alpha : 0.5;

    const dagp::GossipPair gossip = dagp::scan_gossip_pair(m, config.seed);
    const dagp::SpectralModel model =
        dagp::build_spectral_model(gossip.W, gossip.Q, config.smoothness, mu,
                                   rho, alpha, config.eta, config.beta, m);

    try {
        const dagp::RootReport report = dagp::pencil_roots(model);
        dagp::write_root_report(std::cout, report);
    } catch (const dagp::Error& e) {
        std::cout << "root search failed: " << e.what() << "\n";
    }

    const dagp::ParameterCheck check =
        dagp::check_parameter_conditions(model);
    std::cout << check.summary();
    return check.certified_pass() ? kOk : kRunFailure;
}

int gd_check_verb(const std::string& config_path) {
    dagp::ExperimentConfig config;
    if (!config_path.empty()) config = dagp::load_config(config_path);
    if (config.experiment.empty()) config.experiment = "gd_check";
    if (config.experiment != "gd_check") {
        throw dagp::ConfigError(
            "experiment: gd-check requires gd_check, got '" +
            config.experiment + "'");
    }
    return execute(config);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralized constrained optimization testbed"};
    app.require_subcommand(1);

    std::string run_config;
    auto* run_cmd = app.add_subcommand(
        "run", "Run an experiment preset from a config file");
    run_cmd->add_option("config", run_config, "config file")->required();

    std::string scan_config;
    auto* scan_cmd = app.add_subcommand(
        "scan", "Sweep step-size and gain grids for certified regions");
    scan_cmd->add_option("config", scan_config, "config file")->required();

    std::string check_config;
    auto* check_cmd = app.add_subcommand(
        "check-params", "Check the root conditions at one parameter point");
    check_cmd->add_option("config", check_config, "config file")->required();

    std::string gd_config;
    auto* gd_cmd = app.add_subcommand(
        "gd-check", "Validate pencil roots against closed-form gradient "
                    "descent rates");
    gd_cmd->add_option("config", gd_config, "optional config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfigError;
    }

    try {
        if (run_cmd->parsed()) return run_verb(run_config);
        if (scan_cmd->parsed()) return scan_verb(scan_config);
        if (check_cmd->parsed()) return check_params_verb(check_config);
        return gd_check_verb(gd_config);
    } catch (const dagp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const dagp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRunFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRunFailure;
    }
}

// mbsma command-line tool. Talks to the engine exclusively through the C API.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "mbsma.h"

namespace {

int report(mbsma_status status) {
    if (status != MBSMA_OK) std::fprintf(stderr, "mbsma: %s\n", mbsma_last_error());
    return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mbsma: dynamic event-risk prediction by minimum-Brier-score model averaging"};
    app.require_subcommand(1);
    app.set_version_flag("--version", mbsma_version());

    mbsma_options opts;
    mbsma_options_init(&opts);
    app.add_option("--seed", opts.seed, "override the config seed");
    app.add_option("--jobs", opts.jobs, "parallel jobs (0 = all cores)");
    app.add_option("--mc-draws", opts.mc_draws, "Monte Carlo draws per prediction");
    app.add_option("--knots", opts.knots, "baseline hazard pieces");
    app.add_option("--quad-points", opts.quad_points, "quadrature points per dimension");
    app.add_option("--mh-burnin", opts.mh_burnin, "Metropolis-Hastings burn-in steps");

    std::string config, data_dir, spec, plan, out;

    CLI::App* sim = app.add_subcommand("simulate", "generate scenario datasets");
    sim->add_option("--config", config, "scenario config JSON")->required();
    sim->add_option("--out", out, "output directory")->required();

    CLI::App* fit = app.add_subcommand("fit", "fit a joint model by maximum likelihood");
    fit->add_option("--data", data_dir, "dataset directory")->required();
    fit->add_option("--spec", spec, "model spec JSON")->required();
    fit->add_option("--out", out, "output directory")->required();

    CLI::App* pred = app.add_subcommand("predict", "individual dynamic predictions from fitted models");
    pred->add_option("--plan", plan, "prediction plan JSON")->required();
    pred->add_option("--out", out, "output directory")->required();

    CLI::App* wts = app.add_subcommand("weights", "minimum-Brier-score averaging weights on a learning set");
    wts->add_option("--plan", plan, "weights plan JSON")->required();
    wts->add_option("--out", out, "output directory")->required();

    CLI::App* eval = app.add_subcommand("evaluate", "cross-validated landmark evaluation of all methods");
    eval->add_option("--plan", plan, "experiment plan JSON")->required();
    eval->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(MBSMA_ERR_CONFIG);
    }

    if (sim->parsed()) return report(mbsma_cmd_simulate(config.c_str(), out.c_str(), &opts));
    if (fit->parsed()) return report(mbsma_cmd_fit(data_dir.c_str(), spec.c_str(), out.c_str(), &opts));
    if (pred->parsed()) return report(mbsma_cmd_predict(plan.c_str(), out.c_str(), &opts));
    if (wts->parsed()) return report(mbsma_cmd_weights(plan.c_str(), out.c_str(), &opts));
    if (eval->parsed()) return report(mbsma_cmd_evaluate(plan.c_str(), out.c_str(), &opts));
    return static_cast<int>(MBSMA_ERR_CONFIG);
}

#pragma once

#include <cstdint>
#include <string>

namespace mbsma {

// CLI-level option overrides; negative/zero values keep the config defaults.
struct CommandOptions {
    int64_t seed = -1;
    int jobs = 0;
    int mc_draws = 0;
    int knots = 0;
    int quad_points = 0;
    int mh_burnin = 0;
};

void cmd_simulate(const std::string& config_path, const std::string& out_dir, const CommandOptions& opts);
void cmd_fit(const std::string& data_dir, const std::string& spec_path, const std::string& out_dir,
             const CommandOptions& opts);
void cmd_predict(const std::string& plan_path, const std::string& out_dir, const CommandOptions& opts);
void cmd_weights(const std::string& plan_path, const std::string& out_dir, const CommandOptions& opts);
void cmd_evaluate(const std::string& plan_path, const std::string& out_dir, const CommandOptions& opts);

}  // namespace mbsma

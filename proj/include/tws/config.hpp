#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "tws/denoiser.hpp"
#include "tws/trainer.hpp"

namespace tws {

// Thrown with a path-to-key diagnostic before any computation starts.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parsed run configuration: one JSON document drives degrade / solve / train /
// eval. Schema-validated on load; unknown keys are rejected.
struct RunConfig {
    std::string train_dir;
    std::string test_dir;
    std::string output_dir = "out";
    uint64_t seed = 0;
    int jobs = 1;

    BiasFreeCNNConfig model;

    std::vector<TaskSpec> tasks;
    WeightScheme weights = make_reference_scheme(WeightKind::uniform);

    TrainConfig train;
    std::string train_mode = "finetune";  // or "pretrain"
    double pretrain_sigma_min = 0, pretrain_sigma_max = 100;
    std::string init_checkpoint;
    int checkpoint_every = 0;  // 0: per lr cycle

    std::vector<uint64_t> eval_seeds = {0};
    std::vector<double> eval_sigmas = {5, 10, 20, 30, 40, 50};
    int eval_max_images = 0;  // 0: all
    int eval_crop = 0;        // 0: full images

    nlohmann::json raw;
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Builds the TaskSpec operator factory for a partial operator description
// (kind + parameters; dims and seed are filled per sample).
std::function<OperatorDescriptor(int, int, int, uint64_t)> operator_factory_from_json(
    const nlohmann::json& op);

}  // namespace tws

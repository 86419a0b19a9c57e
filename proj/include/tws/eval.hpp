#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tws/denoiser.hpp"
#include "tws/operators.hpp"
#include "tws/solver.hpp"
#include "tws/tensor.hpp"

namespace tws {

// 10 log10(peak^2 / MSE) in dB, MSE over all channels and pixels in double
// precision. Zero error reports the 100 dB cap.
inline constexpr double kPsnrCap = 100.0;

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    double m = mse(a, b);
    if (m <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

// PSNR of the zero-filled projection M M^T x against the ground truth: the
// "Degraded" column of the benchmark.
template <typename T>
double degraded_baseline(const LinearMeasurement& op, const Tensor<T>& x) {
    return psnr(project(op, x), x);
}

struct EvalRow {
    std::string task;
    std::string model;
    std::string setting;  // iteration setting / sigma label
    double mean_psnr = 0;
    double degraded = 0;  // degraded-baseline column (0 when not applicable)
    std::vector<double> per_image;
    std::vector<uint64_t> seeds;
    double ci_half = 0;  // 95% CI half-width over per-seed means; 0 with <2 seeds
    std::string error;   // non-empty when evaluation of this row failed
    nlohmann::json provenance;
    std::string key;     // provenance hash; identical keys are identical rows
};

struct EvalReport {
    std::vector<EvalRow> rows;

    // Serializes to delimited text. Rerunning with the same provenance
    // appends no duplicate rows: existing keys in the file are kept and new
    // rows with matching keys are skipped.
    void save_tsv(const std::string& path) const;
    static EvalReport load_tsv(const std::string& path);

    // Aligned human-readable table, one line per task, one column per model,
    // deltas vs baseline_model in parentheses.
    std::string format_table(const std::string& baseline_model) const;
};

std::string provenance_key(const nlohmann::json& provenance);

struct BenchmarkTask {
    std::string name;
    std::function<OperatorDescriptor(int c, int h, int w, uint64_t seed)> factory;
    SolverConfig solver;
    std::string setting;  // label, e.g. iteration count
};

struct BenchmarkModel {
    std::string name;
    const DenoiserModel<float>* model = nullptr;
    std::string checkpoint_hash;  // provenance only
};

// Degrade / solve / score each (model, task, seed) over the dataset; means and
// per-seed spread are aggregated into one row per (model, task, setting).
// Failed solves are recorded per-row, not fatal.
EvalReport run_benchmark(const std::vector<BenchmarkModel>& models,
                         const std::vector<BenchmarkTask>& tasks,
                         const std::vector<Tensor<float>>& dataset,
                         const std::vector<uint64_t>& seeds, int jobs = 1);

// One-shot denoising PSNR per sigma (0-255 scale) plus the noisy-input
// column.
EvalReport denoise_benchmark(const std::vector<BenchmarkModel>& models,
                             const std::vector<double>& sigmas,
                             const std::vector<Tensor<float>>& dataset,
                             uint64_t seed = 0);

}  // namespace tws

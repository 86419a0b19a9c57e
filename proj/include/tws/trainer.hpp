#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tws/data.hpp"
#include "tws/denoiser.hpp"
#include "tws/operators.hpp"
#include "tws/rng.hpp"
#include "tws/solver.hpp"

namespace tws {

enum class TaskMode { iterative, oneshot_denoise };
enum class LossKind { MSE, L1 };

// One inverse problem for multi-task training: a per-sample operator factory
// (randomized kinds get a fresh seed per sample) plus the solver preset, or a
// one-shot denoising objective with a sigma range on the 0-255 scale.
struct TaskSpec {
    std::string name;
    TaskMode mode = TaskMode::iterative;
    std::function<OperatorDescriptor(int c, int h, int w, uint64_t sample_seed)> operator_factory;
    SolverConfig solver;
    double sigma_min = 0, sigma_max = 100;  // oneshot, 0-255 scale

    void validate() const {
        if (mode == TaskMode::iterative) {
            if (!operator_factory) throw std::invalid_argument("TaskSpec: missing operator factory");
            solver.validate();
        } else {
            if (!(sigma_min >= 0 && sigma_max <= 255 && sigma_min <= sigma_max))
                throw std::invalid_argument("TaskSpec: oneshot sigma range must be within [0,255]");
        }
    }
};

enum class WeightKind { uniform, fixed, normalised };

struct WeightScheme {
    WeightKind kind = WeightKind::uniform;
    std::map<std::string, double> fixed_weights;            // absent task -> 1
    std::map<std::string, double> normalised_inv_weights;   // 1/w per task
    std::vector<std::pair<double, double>> denoise_inv_table;  // (sigma, 1/w), sigma ascending
};

// The published equalised-loss table: per-task prior losses whose reciprocals
// become the weights, plus the sigma-indexed table for one-shot denoising.
inline WeightScheme make_reference_scheme(WeightKind kind) {
    WeightScheme s;
    s.kind = kind;
    s.fixed_weights = {{"denoise", 5.0}};
    s.normalised_inv_weights = {{"inpaint", 0.014}, {"sr2", 0.035}, {"sensing", 0.048}};
    s.denoise_inv_table = {{5, 0.011}, {10, 0.017}, {20, 0.026},
                           {30, 0.033}, {40, 0.040}, {50, 0.046}};
    return s;
}

// Piecewise-linear interpolation of the 1/w table over sigma, clamped to the
// table endpoints; U(0,100) draws outside [5,50] use the nearest entry.
inline double interp_inv_weight(const std::vector<std::pair<double, double>>& table,
                                double sigma) {
    if (table.empty()) throw std::invalid_argument("weight table is empty");
    if (sigma <= table.front().first) return table.front().second;
    if (sigma >= table.back().first) return table.back().second;
    for (size_t i = 1; i < table.size(); ++i)
        if (sigma <= table[i].first) {
            double t = (sigma - table[i - 1].first) / (table[i].first - table[i - 1].first);
            return table[i - 1].second + t * (table[i].second - table[i - 1].second);
        }
    return table.back().second;
}

inline double task_weight(const WeightScheme& scheme, const TaskSpec& task,
                          std::optional<double> sigma = std::nullopt) {
    switch (scheme.kind) {
        case WeightKind::uniform:
            return 1.0;
        case WeightKind::fixed: {
            auto it = scheme.fixed_weights.find(task.name);
            return it == scheme.fixed_weights.end() ? 1.0 : it->second;
        }
        case WeightKind::normalised: {
            if (task.mode == TaskMode::oneshot_denoise) {
                if (!sigma)
                    throw std::invalid_argument(
                        "task_weight: normalised denoise weight needs the sampled sigma");
                return 1.0 / interp_inv_weight(scheme.denoise_inv_table, *sigma);
            }
            auto it = scheme.normalised_inv_weights.find(task.name);
            if (it == scheme.normalised_inv_weights.end())
                throw std::invalid_argument("task_weight: no table entry for task " + task.name);
            return 1.0 / it->second;
        }
    }
    throw std::logic_error("bad WeightKind");
}

inline double total_loss(const std::vector<double>& losses, const std::vector<double>& weights) {
    if (losses.size() != weights.size())
        throw std::invalid_argument("total_loss: length mismatch");
    double acc = 0;
    for (size_t i = 0; i < losses.size(); ++i) acc += weights[i] * losses[i];
    return acc;
}

// Contiguous equal splits of a batch across tasks; the remainder slots rotate
// round-robin with the step index. Returns per-task counts.
inline std::vector<size_t> split_batch(size_t batch, size_t tasks, uint64_t rotation = 0) {
    if (batch == 0) throw std::invalid_argument("split_batch: empty batch");
    if (tasks == 0 || batch < tasks)
        throw std::invalid_argument("split_batch: batch smaller than task count");
    std::vector<size_t> sizes(tasks, batch / tasks);
    size_t rem = batch % tasks;
    for (size_t j = 0; j < rem; ++j) sizes[(rotation + j) % tasks] += 1;
    return sizes;
}

struct TrainConfig {
    int epochs = 20;
    int batch_size = 12;
    int crop_size = 32;
    AugmentFlags augment;
    double lr0 = 1e-3;
    double weight_decay = 1e-4;
    int first_cycle = 100;  // epochs, cosine to zero, then warm restarts
    int cycle = 50;
    LossKind loss_kind = LossKind::MSE;
    uint64_t seed = 0;
    int steps_per_epoch = 0;  // 0: image_count / batch_size
    int start_epoch = 0;      // resume point; lr / data streams follow the absolute epoch

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: bad sizes");
        if (crop_size % 2) throw std::invalid_argument("TrainConfig: crop_size must be even");
        if (first_cycle < 1 || cycle < 1) throw std::invalid_argument("TrainConfig: bad cycles");
        if (start_epoch < 0 || start_epoch >= epochs)
            throw std::invalid_argument("TrainConfig: start_epoch out of range");
    }
};

// Cosine half-wave from lr0 to 0; first cycle first_cycle epochs, then warm
// restarts every cycle epochs.
inline double lr_at(const TrainConfig& cfg, double epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
    double e, len;
    if (epoch < cfg.first_cycle) {
        e = epoch;
        len = cfg.first_cycle;
    } else {
        e = std::fmod(epoch - cfg.first_cycle, double(cfg.cycle));
        len = cfg.cycle;
    }
    return cfg.lr0 * 0.5 * (1.0 + std::cos(M_PI * e / len));
}

struct TrainingHistory {
    std::vector<std::string> task_names;
    struct Row {
        int epoch, step;
        double lr;
        std::vector<double> task_loss;
        std::vector<double> task_weight;
        double total;
    };
    std::vector<Row> rows;

    void save_tsv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write history: " + path);
        f << "epoch\tstep\tlr";
        for (const auto& n : task_names) f << "\tloss_" << n << "\tweight_" << n;
        f << "\ttotal\n";
        char buf[64];
        auto num = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            return std::string(buf);
        };
        for (const auto& r : rows) {
            f << r.epoch << '\t' << r.step << '\t' << num(r.lr);
            for (size_t i = 0; i < r.task_loss.size(); ++i)
                f << '\t' << num(r.task_loss[i]) << '\t' << num(r.task_weight[i]);
            f << '\t' << num(r.total) << '\n';
        }
    }
};

namespace detail {

template <typename T>
double loss_value(LossKind kind, const Tensor<T>& out, const Tensor<T>& target) {
    double acc = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        double d = double(out.v[i]) - double(target.v[i]);
        acc += kind == LossKind::MSE ? d * d : std::abs(d);
    }
    return acc / double(out.size());
}

template <typename T>
Tensor<T> loss_grad(LossKind kind, const Tensor<T>& out, const Tensor<T>& target, double scale) {
    Tensor<T> g(out.channels, out.height, out.width);
    const double n = double(out.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double d = double(out.v[i]) - double(target.v[i]);
        g.v[i] = T(scale * (kind == LossKind::MSE ? 2.0 * d / n
                                                  : (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n));
    }
    return g;
}

}  // namespace detail

// Mean reconstruction loss of a full unrolled solver run over the minibatch.
// When grads is non-null, d(weight * loss)/d(parameters) is accumulated, with
// gradient flowing through every solver iteration.
template <typename T>
double unrolled_task_loss(BiasFreeCNN<T>& net, const TaskSpec& task,
                          const std::vector<Tensor<T>>& minibatch, Rng& rng, LossKind loss_kind,
                          typename BiasFreeCNN<T>::Grads* grads = nullptr, double weight = 1.0) {
    task.validate();
    if (task.mode != TaskMode::iterative)
        throw std::invalid_argument("unrolled_task_loss: task is not iterative");
    double loss_sum = 0;
    const double m = double(minibatch.size());
    for (const auto& x : minibatch) {
        OperatorDescriptor desc =
            task.operator_factory(x.channels, x.height, x.width, rng.next_u64());
        auto op = make_operator(desc);
        std::vector<T> xc = measure(*op, x);
        SolverConfig cfg = task.solver;
        cfg.stop_mode = StopMode::fixed_iters;
        cfg.rng_seed = rng.next_u64();
        UnrolledRun<T> unrolled;
        Tensor<T> out = unrolled.forward(net, *op, xc, cfg);
        loss_sum += detail::loss_value(loss_kind, out, x);
        if (grads) {
            Tensor<T> g = detail::loss_grad(loss_kind, out, x, weight / m);
            unrolled.backward(g, net, *op, *grads);
        }
    }
    return loss_sum / m;
}

// Single-forward-pass denoising objective: y = x + (sigma/255) z with
// sigma ~ U(sigma_range). weight_of_sigma supplies the (possibly
// sigma-dependent) loss weight used for gradient accumulation; drawn sigmas
// are reported so callers can log them.
template <typename T>
double oneshot_denoise_loss(BiasFreeCNN<T>& net, const std::vector<Tensor<T>>& minibatch,
                            double sigma_min, double sigma_max, Rng& rng, LossKind loss_kind,
                            typename BiasFreeCNN<T>::Grads* grads = nullptr,
                            const std::function<double(double)>& weight_of_sigma = nullptr,
                            std::vector<double>* drawn_sigmas = nullptr) {
    double loss_sum = 0;
    const double m = double(minibatch.size());
    for (const auto& x : minibatch) {
        double sigma = rng.uniform(sigma_min, sigma_max);
        if (drawn_sigmas) drawn_sigmas->push_back(sigma);
        Tensor<T> y = x;
        for (auto& v : y.v) v += T(sigma / 255.0 * rng.normal());
        typename BiasFreeCNN<T>::Workspace ws;
        Tensor<T> residual = net.forward_residual(y, grads ? &ws : nullptr);
        Tensor<T> out = y - residual;
        loss_sum += detail::loss_value(loss_kind, out, x);
        if (grads) {
            double w = weight_of_sigma ? weight_of_sigma(sigma) : 1.0;
            Tensor<T> g = detail::loss_grad(loss_kind, out, x, -w / m);  // d out/d residual = -I
            net.backward_residual(g, ws, *grads);
        }
    }
    return loss_sum / m;
}

// Decoupled-weight-decay adaptive-moment optimizer.
template <typename T>
class AdamW {
  public:
    AdamW(const BiasFreeCNN<T>& net, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8)
        : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& l : net.layers()) {
            m_.emplace_back(l.w.size(), 0.0);
            v_.emplace_back(l.w.size(), 0.0);
        }
    }

    void step(BiasFreeCNN<T>& net, const typename BiasFreeCNN<T>::Grads& grads, double lr) {
        ++t_;
        double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
        auto& layers = net.layers();
        for (size_t l = 0; l < layers.size(); ++l) {
            auto& w = layers[l].w;
            const auto& g = grads.gw[l];
            for (size_t i = 0; i < w.size(); ++i) {
                double gi = double(g[i]);
                m_[l][i] = b1_ * m_[l][i] + (1 - b1_) * gi;
                v_[l][i] = b2_ * v_[l][i] + (1 - b2_) * gi * gi;
                double mhat = m_[l][i] / c1, vhat = v_[l][i] / c2;
                w[i] = T(double(w[i]) -
                         lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * double(w[i])));
            }
        }
    }

  private:
    double wd_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

using CheckpointCallback = std::function<void(int epoch)>;

// AWGN pretraining: the blind-denoiser baseline every comparison starts from.
template <typename T>
TrainingHistory pretrain_denoiser(BiasFreeCNN<T>& net, const PatchDataset& dataset,
                                  double sigma_min, double sigma_max, const TrainConfig& cfg,
                                  const CheckpointCallback& on_cycle_end = nullptr) {
    cfg.validate();
    if (dataset.image_count() == 0) throw std::invalid_argument("pretrain: empty dataset");
    TrainingHistory hist;
    hist.task_names = {"denoise"};
    AdamW<T> opt(net, cfg.weight_decay);
    int steps = cfg.steps_per_epoch > 0
                    ? cfg.steps_per_epoch
                    : std::max<int>(1, int(dataset.image_count()) / cfg.batch_size);
    for (int epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
        double lr = lr_at(cfg, epoch);
        Rng data_rng = dataset.epoch_stream(derive_seed(cfg.seed, "pretrain-data", epoch));
        Rng noise_rng(derive_seed(cfg.seed, "pretrain-noise", epoch));
        for (int step = 0; step < steps; ++step) {
            std::vector<Tensor<T>> batch;
            for (int b = 0; b < cfg.batch_size; ++b)
                batch.push_back(dataset.random_patch(data_rng).template cast<T>());
            typename BiasFreeCNN<T>::Grads grads(net);
            double loss = oneshot_denoise_loss(net, batch, sigma_min, sigma_max, noise_rng,
                                               cfg.loss_kind, &grads);
            if (!std::isfinite(loss)) throw std::runtime_error("pretraining diverged");
            opt.step(net, grads, lr);
            hist.rows.push_back({epoch, step, lr, {loss}, {1.0}, loss});
        }
        bool cycle_end = (epoch + 1 == cfg.first_cycle) ||
                         (epoch + 1 > cfg.first_cycle && (epoch + 1 - cfg.first_cycle) % cfg.cycle == 0) ||
                         epoch + 1 == cfg.epochs;
        if (on_cycle_end && cycle_end) on_cycle_end(epoch);
    }
    return hist;
}

// Multi-task unrolled fine-tuning: each step draws a batch, splits it
// contiguously across tasks (remainder rotating), runs every task's objective
// with gradients retained through the full unrolled graph, and applies one
// AdamW update on the weighted sum. Gradient reduction order is fixed
// (task order, then image order within a task), so runs are reproducible.
// Tasks whose weight is identically zero are skipped; per-task RNG streams are
// independent, so the updates match a run without that task.
template <typename T>
TrainingHistory fine_tune(BiasFreeCNN<T>& net, const PatchDataset& dataset,
                          const std::vector<TaskSpec>& tasks, const WeightScheme& scheme,
                          const TrainConfig& cfg, const CheckpointCallback& on_cycle_end = nullptr) {
    cfg.validate();
    if (tasks.empty()) throw std::invalid_argument("fine_tune: no tasks");
    for (const auto& t : tasks) t.validate();
    TrainingHistory hist;
    for (const auto& t : tasks) hist.task_names.push_back(t.name);
    AdamW<T> opt(net, cfg.weight_decay);
    int steps = cfg.steps_per_epoch > 0
                    ? cfg.steps_per_epoch
                    : std::max<int>(1, int(dataset.image_count()) / cfg.batch_size);
    for (int epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
        double lr = lr_at(cfg, epoch);
        Rng data_rng = dataset.epoch_stream(derive_seed(cfg.seed, "finetune-data", epoch));
        for (int step = 0; step < steps; ++step) {
            uint64_t global_step = uint64_t(epoch) * steps + step;
            std::vector<Tensor<T>> batch;
            for (int b = 0; b < cfg.batch_size; ++b)
                batch.push_back(dataset.random_patch(data_rng).template cast<T>());
            std::vector<size_t> sizes = split_batch(batch.size(), tasks.size(), global_step);
            typename BiasFreeCNN<T>::Grads grads(net);
            std::vector<double> losses(tasks.size(), 0.0), weights(tasks.size(), 0.0);
            size_t offset = 0;
            double total = 0;
            for (size_t i = 0; i < tasks.size(); ++i) {
                const TaskSpec& task = tasks[i];
                std::vector<Tensor<T>> mini(batch.begin() + offset,
                                            batch.begin() + offset + sizes[i]);
                offset += sizes[i];
                Rng task_rng(derive_seed(cfg.seed, "task:" + task.name, global_step));
                if (task.mode == TaskMode::iterative) {
                    double w = task_weight(scheme, task);
                    weights[i] = w;
                    if (w == 0.0) continue;
                    losses[i] = unrolled_task_loss(net, task, mini, task_rng, cfg.loss_kind,
                                                   &grads, w);
                    total += w * losses[i];
                } else {
                    auto w_of_sigma = [&](double sigma) {
                        return task_weight(scheme, task, sigma);
                    };
                    weights[i] = scheme.kind == WeightKind::normalised
                                     ? 0.0  // per-sample; recorded via losses only
                                     : task_weight(scheme, task, 0.0);
                    if (scheme.kind != WeightKind::normalised && weights[i] == 0.0) continue;
                    losses[i] = oneshot_denoise_loss(net, mini, task.sigma_min, task.sigma_max,
                                                     task_rng, cfg.loss_kind, &grads, w_of_sigma);
                    total += (scheme.kind == WeightKind::normalised ? 1.0 : weights[i]) * losses[i];
                }
            }
            if (!std::isfinite(total)) throw std::runtime_error("fine-tuning diverged");
            opt.step(net, grads, lr);
            hist.rows.push_back({epoch, step, lr, losses, weights, total});
        }
        bool cycle_end = (epoch + 1 == cfg.first_cycle) ||
                         (epoch + 1 > cfg.first_cycle && (epoch + 1 - cfg.first_cycle) % cfg.cycle == 0) ||
                         epoch + 1 == cfg.epochs;
        if (on_cycle_end && cycle_end) on_cycle_end(epoch);
    }
    return hist;
}

}  // namespace tws

#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tws/denoiser.hpp"
#include "tws/operators.hpp"
#include "tws/rng.hpp"
#include "tws/tensor.hpp"

namespace tws {

enum class StopMode { fixed_iters, sigma_threshold };

struct SolverConfig {
    double sigma0 = 0.8;
    double sigmaL = 0.01;
    double h0 = 0.09;
    double beta = 0.2;
    int max_iters = 50;
    StopMode stop_mode = StopMode::fixed_iters;
    uint64_t rng_seed = 0;

    void validate() const {
        if (!(sigma0 > sigmaL) || sigmaL < 0)
            throw std::invalid_argument("SolverConfig: need sigma0 > sigmaL >= 0");
        if (!(h0 > 0 && h0 <= 1)) throw std::invalid_argument("SolverConfig: h0 must be in (0,1]");
        if (!(beta > 0 && beta <= 1))
            throw std::invalid_argument("SolverConfig: beta must be in (0,1]");
        if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
    }
};

// Iteration presets: (iterations, beta, h0, sigma0). The long preset is kept
// verbatim even though its sigma0 = 0.08 starts nearly noiseless;
// long_corrected swaps in sigma0 = 0.8 for runs that want the high-noise
// start.
inline SolverConfig config_preset(const std::string& name) {
    SolverConfig c;
    if (name == "short") {
        c.max_iters = 25; c.beta = 0.4; c.h0 = 0.10; c.sigma0 = 0.6;
    } else if (name == "medium") {
        c.max_iters = 50; c.beta = 0.2; c.h0 = 0.09; c.sigma0 = 0.8;
    } else if (name == "long") {
        c.max_iters = 100; c.beta = 0.06; c.h0 = 0.5; c.sigma0 = 0.08;
    } else if (name == "long_corrected") {
        c.max_iters = 100; c.beta = 0.06; c.h0 = 0.5; c.sigma0 = 0.8;
    } else {
        throw std::invalid_argument("unknown solver preset: " + name);
    }
    c.sigmaL = 0.01;
    return c;
}

// h_t = h0 t / (1 + h0 (t-1)); nondecreasing, h_1 = h0, limit 1.
inline double step_size(double h0, int t) {
    if (t < 1) throw std::invalid_argument("step_size: t must be >= 1");
    return h0 * t / (1.0 + h0 * (t - 1));
}

// gamma_t = sqrt(max(0, (1-beta h)^2 - (1-h)^2)) * ||d|| / sqrt(N).
// A negative radicand (misconfigured beta*h) clamps to zero rather than
// erroring so training runs survive it; callers can watch clamp_count.
inline double noise_amplitude(double beta, double h, double d_norm, size_t n,
                              size_t* clamp_count = nullptr) {
    double a = 1.0 - beta * h, b = 1.0 - h;
    double rad = a * a - b * b;
    if (rad < 0) {
        if (clamp_count) ++(*clamp_count);
        else std::cerr << "twsolver: warning: negative gamma radicand clamped to 0\n";
        rad = 0;
    }
    return std::sqrt(rad) * d_norm / std::sqrt(double(n));
}

template <typename T>
struct SolverState {
    int t = 0;
    Tensor<T> y;
    Tensor<T> d;
    double sigma_est = 0;
    Rng rng{0};
};

struct SolverTrace {
    struct Row {
        int t;
        double h, gamma, sigma_est, meas_residual;
    };
    std::vector<Row> rows;
    bool cap_hit = false;  // sigma_threshold mode stopped by the iteration cap
    size_t gamma_clamps = 0;

    void write_tsv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write trace file: " + path);
        f << "iter\th\tgamma\tsigma_est\tmeas_residual\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%d\t%.9g\t%.9g\t%.9g\t%.9g\n", r.t, r.h, r.gamma,
                          r.sigma_est, r.meas_residual);
            f << buf;
        }
    }
};

// y_0 ~ N(0.5 (I - MM^T) e + M x^c, sigma0^2 I), e the all-ones image.
template <typename T>
SolverState<T> init_state(const LinearMeasurement& op, const std::vector<T>& xc,
                          const SolverConfig& config) {
    config.validate();
    if (static_cast<int>(xc.size()) != op.dim())
        throw std::invalid_argument("init_state: measurement dimension mismatch");
    const auto& d = op.descriptor();
    SolverState<T> st;
    st.rng = Rng(config.rng_seed);
    Tensor<T> ones(d.channels, d.height, d.width);
    ones.fill(T(1));
    Tensor<T> mean = ones - project(op, ones) ;
    mean *= T(0.5);
    mean += lift(op, xc);
    st.y = mean;
    for (auto& v : st.y.v) v += T(config.sigma0 * st.rng.normal());
    st.d = Tensor<T>(d.channels, d.height, d.width);
    st.sigma_est = config.sigma0;
    st.t = 0;
    return st;
}

// Eq for the conditional gradient:
//   d = (I - MM^T)(xhat - y) + M(x^c - M^T y)
template <typename T>
Tensor<T> conditional_gradient(const DenoiserModel<T>& denoiser, const LinearMeasurement& op,
                               const std::vector<T>& xc, const Tensor<T>& y,
                               double sigma_est) {
    Tensor<T> residual = denoiser.denoise_at(y, sigma_est) - y;
    Tensor<T> d = residual - project(op, residual);
    std::vector<T> mismatch = measure(op, y);
    for (size_t i = 0; i < mismatch.size(); ++i) mismatch[i] = xc[i] - mismatch[i];
    d += lift(op, mismatch);
    return d;
}

// One update y <- y + h_t d_t + gamma_t z_t. The z draw happens every step so
// the RNG layout does not depend on beta or on gamma clamping.
template <typename T>
void solver_step(SolverState<T>& state, const DenoiserModel<T>& denoiser,
                 const LinearMeasurement& op, const std::vector<T>& xc,
                 const SolverConfig& config, SolverTrace* trace = nullptr) {
    const int t = state.t + 1;
    const double h = step_size(config.h0, t);
    state.d = conditional_gradient(denoiser, op, xc, state.y, state.sigma_est);
    const double dnorm = double(state.d.norm2());
    const double gamma = noise_amplitude(config.beta, h, dnorm, state.y.size(),
                                         trace ? &trace->gamma_clamps : nullptr);
    for (size_t i = 0; i < state.y.size(); ++i) {
        double z = state.rng.normal();
        state.y.v[i] += T(h * double(state.d.v[i]) + gamma * z);
    }
    state.sigma_est = dnorm / std::sqrt(double(state.y.size()));
    state.t = t;
    if (!state.y.all_finite())
        throw std::runtime_error("solver diverged to non-finite values at iteration " +
                                 std::to_string(t));
    if (trace) {
        std::vector<T> m = measure(op, state.y);
        double res = 0;
        for (size_t i = 0; i < m.size(); ++i) {
            double e = double(xc[i]) - double(m[i]);
            res += e * e;
        }
        trace->rows.push_back({t, h, gamma, state.sigma_est, std::sqrt(res)});
    }
}

// Full Algorithm-1 run. fixed_iters executes exactly max_iters steps;
// sigma_threshold continues while the effective noise estimate stays above
// sigmaL, capped at max_iters.
template <typename T>
std::pair<Tensor<T>, SolverTrace> run(const DenoiserModel<T>& denoiser,
                                      const LinearMeasurement& op, const std::vector<T>& xc,
                                      const SolverConfig& config) {
    config.validate();
    SolverState<T> state = init_state(op, xc, config);
    SolverTrace trace;
    for (int t = 1; t <= config.max_iters; ++t) {
        if (config.stop_mode == StopMode::sigma_threshold && state.sigma_est <= config.sigmaL)
            break;
        solver_step(state, denoiser, op, xc, config, &trace);
        if (config.stop_mode == StopMode::sigma_threshold && t == config.max_iters &&
            state.sigma_est > config.sigmaL)
            trace.cap_hit = true;
    }
    return {std::move(state.y), std::move(trace)};
}

// Differentiable unrolled run over a BiasFreeCNN. forward() reproduces the
// exact same iterates as run() in fixed_iters mode (same RNG layout) while
// recording per-step context; backward() pushes dL/dy_T through every step
// into the network's parameter gradients. The noise draws z_t are constants of
// the graph, but gamma_t(d_t) is differentiated.
template <typename T>
class UnrolledRun {
  public:
    Tensor<T> forward(const BiasFreeCNN<T>& net, const LinearMeasurement& op,
                      const std::vector<T>& xc, const SolverConfig& config) {
        config.validate();
        steps_.clear();
        SolverState<T> state = init_state(op, xc, config);
        const size_t n = state.y.size();
        for (int t = 1; t <= config.max_iters; ++t) {
            Step s;
            s.h = step_size(config.h0, t);
            s.y_prev = state.y;
            Tensor<T> residual = net.forward_residual(state.y, &s.ws);
            // xhat - y = -residual
            Tensor<T> d = T(-1) * (residual - project(op, residual));
            std::vector<T> mismatch = measure(op, state.y);
            for (size_t i = 0; i < mismatch.size(); ++i) mismatch[i] = xc[i] - mismatch[i];
            d += lift(op, mismatch);
            s.dnorm = double(d.norm2());
            s.gamma = noise_amplitude(config.beta, s.h, s.dnorm, n, &clamp_count_);
            s.gamma_clamped = (1.0 - config.beta * s.h) * (1.0 - config.beta * s.h) -
                                  (1.0 - s.h) * (1.0 - s.h) < 0;
            s.z = Tensor<T>(state.y.channels, state.y.height, state.y.width);
            for (size_t i = 0; i < n; ++i) s.z.v[i] = T(state.rng.normal());
            for (size_t i = 0; i < n; ++i)
                state.y.v[i] += T(s.h * double(d.v[i]) + s.gamma * double(s.z.v[i]));
            s.d = std::move(d);
            state.sigma_est = s.dnorm / std::sqrt(double(n));
            if (!state.y.all_finite())
                throw std::runtime_error("unrolled solver diverged at iteration " +
                                         std::to_string(t));
            steps_.push_back(std::move(s));
        }
        return state.y;
    }

    void backward(const Tensor<T>& grad_final, const BiasFreeCNN<T>& net,
                  const LinearMeasurement& op, typename BiasFreeCNN<T>::Grads& grads) const {
        Tensor<T> g = grad_final;
        const double sqrt_n = std::sqrt(double(grad_final.size()));
        for (size_t i = steps_.size(); i-- > 0;) {
            const Step& s = steps_[i];
            // y_t = y_{t-1} + h d + gamma(d) z, with gamma = c ||d|| / sqrt(N),
            // so d(gamma)/d(d) = gamma d / ||d||^2 (zero when clamped).
            (void)sqrt_n;
            Tensor<T> gd = T(s.h) * g;
            if (s.gamma > 0 && !s.gamma_clamped && s.dnorm > 0)
                gd.axpy(T(dot(g, s.z) * s.gamma / (s.dnorm * s.dnorm)), s.d);
            // d = -(I-P) r + lift(xc) - P y  with r = net(y)
            Tensor<T> gr = gd - project(op, gd);
            gr *= T(-1);
            Tensor<T> gy = net.backward_residual(gr, s.ws, grads);
            gy -= project(op, gd);
            g += gy;
        }
    }

    const std::vector<SolverTrace::Row> trace_rows() const {
        std::vector<SolverTrace::Row> rows;
        for (size_t i = 0; i < steps_.size(); ++i)
            rows.push_back({int(i + 1), steps_[i].h, steps_[i].gamma,
                            steps_[i].dnorm, 0.0});
        return rows;
    }

    size_t clamp_count() const { return clamp_count_; }

  private:
    struct Step {
        double h = 0, gamma = 0, dnorm = 0;
        bool gamma_clamped = false;
        Tensor<T> y_prev, d, z;
        typename BiasFreeCNN<T>::Workspace ws;
    };
    std::vector<Step> steps_;
    size_t clamp_count_ = 0;
};

}  // namespace tws

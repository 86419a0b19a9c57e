#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tws/rng.hpp"
#include "tws/tensor.hpp"

namespace tws {

// Blind denoiser contract. denoise_at is the solver hook; blind models ignore
// the effective noise level, the analytic oracle consumes it.
template <typename T>
class DenoiserModel {
  public:
    virtual ~DenoiserModel() = default;
    virtual Tensor<T> denoise(const Tensor<T>& y) const = 0;
    virtual Tensor<T> denoise_at(const Tensor<T>& y, double /*sigma_est*/) const {
        return denoise(y);
    }
    virtual bool differentiable() const { return false; }
};

// d = denoise(y) - y, the Tweedie-Miyasawa residual sigma^2 * score.
template <typename T>
Tensor<T> prior_residual(const DenoiserModel<T>& model, const Tensor<T>& y) {
    return model.denoise(y) - y;
}

struct BiasFreeCNNConfig {
    int depth = 5;
    int channels = 32;
    int kernel_size = 3;
    int input_channels = 3;
    uint64_t init_seed = 0;

    void validate() const {
        if (depth < 2) throw std::invalid_argument("BiasFreeCNNConfig: depth must be >= 2");
        if (kernel_size % 2 == 0 || kernel_size <= 0)
            throw std::invalid_argument("BiasFreeCNNConfig: kernel_size must be odd");
        if (channels <= 0 || input_channels <= 0)
            throw std::invalid_argument("BiasFreeCNNConfig: channel counts must be positive");
    }
};

// DnCNN-style residual denoiser with every additive bias removed: plain
// zero-padded convolutions and ReLUs, so the network is positively homogeneous
// and maps zero to zero exactly. denoise(y) = y - net(y).
template <typename T>
class BiasFreeCNN final : public DenoiserModel<T> {
  public:
    struct Layer {
        int in_ch, out_ch, k;
        std::vector<T> w;  // [out][in][ky][kx]
    };

    struct Workspace {
        // act[0] = input; act[l] = post-ReLU output of layer l (hidden layers).
        std::vector<Tensor<T>> act;
    };

    struct Grads {
        std::vector<std::vector<T>> gw;

        explicit Grads(const BiasFreeCNN& net) {
            for (const auto& l : net.layers_) gw.emplace_back(l.w.size(), T(0));
        }
        void zero() {
            for (auto& g : gw) std::fill(g.begin(), g.end(), T(0));
        }
        Grads& operator+=(const Grads& o) {
            for (size_t l = 0; l < gw.size(); ++l)
                for (size_t i = 0; i < gw[l].size(); ++i) gw[l][i] += o.gw[l][i];
            return *this;
        }
    };

    explicit BiasFreeCNN(const BiasFreeCNNConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng(cfg.init_seed);
        for (int l = 0; l < cfg.depth; ++l) {
            int in = l == 0 ? cfg.input_channels : cfg.channels;
            int out = l == cfg.depth - 1 ? cfg.input_channels : cfg.channels;
            Layer layer{in, out, cfg.kernel_size, {}};
            layer.w.resize(static_cast<size_t>(out) * in * cfg.kernel_size * cfg.kernel_size);
            double scale = std::sqrt(2.0 / (double(in) * cfg.kernel_size * cfg.kernel_size));
            for (auto& x : layer.w) x = T(scale * rng.normal());
            layers_.push_back(std::move(layer));
        }
    }

    const BiasFreeCNNConfig& config() const { return cfg_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }
    bool differentiable() const override { return true; }

    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& l : layers_) n += l.w.size();
        return n;
    }
    // Count of additive bias parameters in the model. Always zero; exists so
    // tests can assert the census rather than trust the name.
    size_t bias_parameter_count() const { return 0; }

    // Predicted noise r(y); the clean estimate is y - r(y).
    Tensor<T> forward_residual(const Tensor<T>& y, Workspace* ws = nullptr) const {
        if (y.channels != cfg_.input_channels)
            throw std::invalid_argument("BiasFreeCNN: channel count mismatch");
        if (ws) {
            ws->act.clear();
            ws->act.push_back(y);
        }
        Tensor<T> cur = y;
        for (size_t l = 0; l < layers_.size(); ++l) {
            Tensor<T> next = conv2d(layers_[l], cur);
            if (l + 1 < layers_.size()) {
                for (auto& x : next.v) x = x > T(0) ? x : T(0);
                if (ws) ws->act.push_back(next);
            }
            cur = std::move(next);
        }
        return cur;
    }

    Tensor<T> denoise(const Tensor<T>& y) const override {
        return y - forward_residual(y);
    }

    // Reverse pass of forward_residual: given dL/dr, accumulates dL/dw into
    // grads and returns dL/dy. Requires the workspace captured in forward.
    Tensor<T> backward_residual(const Tensor<T>& grad_out, const Workspace& ws,
                                Grads& grads) const {
        Tensor<T> g = grad_out;
        for (size_t l = layers_.size(); l-- > 0;) {
            const Tensor<T>& input = ws.act[l];
            if (l + 1 < layers_.size()) {
                // Gate through the ReLU that followed this layer's conv.
                const Tensor<T>& post = ws.act[l + 1];
                for (size_t i = 0; i < g.v.size(); ++i)
                    if (!(post.v[i] > T(0))) g.v[i] = T(0);
            }
            conv2d_grad_w(layers_[l], input, g, grads.gw[l]);
            g = conv2d_grad_in(layers_[l], g);
        }
        return g;
    }

  private:
    static Tensor<T> conv2d(const Layer& layer, const Tensor<T>& in) {
        const int H = in.height, W = in.width, K = layer.k, P = K / 2;
        Tensor<T> out(layer.out_ch, H, W);
        for (int oc = 0; oc < layer.out_ch; ++oc) {
            T* op = out.data() + static_cast<size_t>(oc) * H * W;
            for (int ic = 0; ic < layer.in_ch; ++ic) {
                const T* ip = in.data() + static_cast<size_t>(ic) * H * W;
                const T* wp =
                    layer.w.data() + (static_cast<size_t>(oc) * layer.in_ch + ic) * K * K;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        T w = wp[ky * K + kx];
                        int dy = ky - P, dx = kx - P;
                        int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                        for (int y = y0; y < y1; ++y) {
                            T* orow = op + static_cast<size_t>(y) * W;
                            const T* irow = ip + static_cast<size_t>(y + dy) * W + dx;
                            for (int x = x0; x < x1; ++x) orow[x] += w * irow[x];
                        }
                    }
            }
        }
        return out;
    }

    // dL/din for zero-padded conv = correlation of grad_out with the kernel
    // flipped in space and transposed in channels.
    static Tensor<T> conv2d_grad_in(const Layer& layer, const Tensor<T>& gout) {
        const int H = gout.height, W = gout.width, K = layer.k, P = K / 2;
        Tensor<T> gin(layer.in_ch, H, W);
        for (int oc = 0; oc < layer.out_ch; ++oc) {
            const T* gp = gout.data() + static_cast<size_t>(oc) * H * W;
            for (int ic = 0; ic < layer.in_ch; ++ic) {
                T* ip = gin.data() + static_cast<size_t>(ic) * H * W;
                const T* wp =
                    layer.w.data() + (static_cast<size_t>(oc) * layer.in_ch + ic) * K * K;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        T w = wp[ky * K + kx];
                        int dy = P - ky, dx = P - kx;
                        int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                        for (int y = y0; y < y1; ++y) {
                            T* irow = ip + static_cast<size_t>(y) * W;
                            const T* grow = gp + static_cast<size_t>(y + dy) * W + dx;
                            for (int x = x0; x < x1; ++x) irow[x] += w * grow[x];
                        }
                    }
            }
        }
        return gin;
    }

    static void conv2d_grad_w(const Layer& layer, const Tensor<T>& in, const Tensor<T>& gout,
                              std::vector<T>& gw) {
        const int H = in.height, W = in.width, K = layer.k, P = K / 2;
        for (int oc = 0; oc < layer.out_ch; ++oc) {
            const T* gp = gout.data() + static_cast<size_t>(oc) * H * W;
            for (int ic = 0; ic < layer.in_ch; ++ic) {
                const T* ip = in.data() + static_cast<size_t>(ic) * H * W;
                T* wp = gw.data() + (static_cast<size_t>(oc) * layer.in_ch + ic) * K * K;
                for (int ky = 0; ky < K; ++ky)
                    for (int kx = 0; kx < K; ++kx) {
                        int dy = ky - P, dx = kx - P;
                        int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                        double acc = 0;
                        for (int y = y0; y < y1; ++y) {
                            const T* grow = gp + static_cast<size_t>(y) * W;
                            const T* irow = ip + static_cast<size_t>(y + dy) * W + dx;
                            for (int x = x0; x < x1; ++x) acc += double(grow[x]) * double(irow[x]);
                        }
                        wp[ky * K + kx] += T(acc);
                    }
            }
        }
    }

    BiasFreeCNNConfig cfg_;
    std::vector<Layer> layers_;
};

template <typename T>
BiasFreeCNN<T> init_bias_free_cnn(const BiasFreeCNNConfig& cfg) {
    return BiasFreeCNN<T>(cfg);
}

// Analytic Gaussian prior N(mean, cov). Covariance is either isotropic
// iso_var * I or an explicit dense SPD matrix for small instances.
template <typename T>
struct GaussianPrior {
    Tensor<T> mean;
    double iso_var = 1.0;
    std::optional<Eigen::MatrixXd> cov;

    void validate() const {
        if (!cov && !(iso_var > 0))
            throw std::invalid_argument("GaussianPrior: iso_var must be positive");
        if (cov) {
            if (cov->rows() != cov->cols() ||
                cov->rows() != static_cast<long>(mean.size()))
                throw std::invalid_argument("GaussianPrior: covariance shape mismatch");
            Eigen::LLT<Eigen::MatrixXd> llt(*cov);
            if (llt.info() != Eigen::Success)
                throw std::invalid_argument("GaussianPrior: covariance not positive definite");
        }
    }
};

// Posterior mean mean + Cov (Cov + sigma^2 I)^-1 (y - mean); the exact MMSE
// denoiser for the Gaussian prior, used as the mathematical oracle for the
// residual-score identity.
template <typename T>
Tensor<T> mmse_denoise_gaussian(const GaussianPrior<T>& prior, const Tensor<T>& y, double sigma) {
    if (!(sigma > 0)) throw std::invalid_argument("mmse_denoise_gaussian: sigma must be positive");
    if (!y.same_dims(prior.mean))
        throw std::invalid_argument("mmse_denoise_gaussian: dimension mismatch");
    prior.validate();
    Tensor<T> out = y;
    if (!prior.cov) {
        double a = prior.iso_var / (prior.iso_var + sigma * sigma);
        for (size_t i = 0; i < y.size(); ++i)
            out.v[i] = T(double(prior.mean.v[i]) +
                         a * (double(y.v[i]) - double(prior.mean.v[i])));
        return out;
    }
    const long n = static_cast<long>(y.size());
    Eigen::VectorXd diff(n);
    for (long i = 0; i < n; ++i) diff[i] = double(y.v[i]) - double(prior.mean.v[i]);
    Eigen::MatrixXd a = *prior.cov + sigma * sigma * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd post = *prior.cov * a.ldlt().solve(diff);
    for (long i = 0; i < n; ++i) out.v[i] = T(double(prior.mean.v[i]) + post[i]);
    return out;
}

// Oracle adapter for the solver: wires the solver's effective noise estimate
// into the analytic MMSE denoiser.
template <typename T>
class GaussianMmseDenoiser final : public DenoiserModel<T> {
  public:
    GaussianMmseDenoiser(GaussianPrior<T> prior, double fallback_sigma)
        : prior_(std::move(prior)), fallback_sigma_(fallback_sigma) {
        prior_.validate();
    }

    Tensor<T> denoise(const Tensor<T>& y) const override {
        return mmse_denoise_gaussian(prior_, y, fallback_sigma_);
    }

    Tensor<T> denoise_at(const Tensor<T>& y, double sigma_est) const override {
        double s = sigma_est > 1e-12 ? sigma_est : 1e-12;
        return mmse_denoise_gaussian(prior_, y, s);
    }

    const GaussianPrior<T>& prior() const { return prior_; }

  private:
    GaussianPrior<T> prior_;
    double fallback_sigma_;
};

}  // namespace tws

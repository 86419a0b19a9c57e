#include "tws/operators.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <mutex>
#include <stdexcept>

#include "tws/rng.hpp"

namespace tws {

std::string to_string(OpKind k) {
    switch (k) {
        case OpKind::sr2: return "sr2";
        case OpKind::inpaint_block: return "inpaint_block";
        case OpKind::random_mask: return "random_mask";
        case OpKind::bayer: return "bayer";
        case OpKind::freq_lowpass: return "freq_lowpass";
        case OpKind::random_basis: return "random_basis";
    }
    throw std::logic_error("bad OpKind");
}

OpKind op_kind_from_string(const std::string& s) {
    if (s == "sr2") return OpKind::sr2;
    if (s == "inpaint_block") return OpKind::inpaint_block;
    if (s == "random_mask") return OpKind::random_mask;
    if (s == "bayer") return OpKind::bayer;
    if (s == "freq_lowpass") return OpKind::freq_lowpass;
    if (s == "random_basis") return OpKind::random_basis;
    throw std::invalid_argument("unknown operator kind: " + s);
}

void OperatorDescriptor::validate() const {
    if (channels <= 0 || height <= 0 || width <= 0)
        throw std::invalid_argument("descriptor: image dims must be positive");
    switch (kind) {
        case OpKind::sr2:
            if (height % 2 || width % 2)
                throw std::invalid_argument("descriptor: sr2 needs even height and width");
            break;
        case OpKind::bayer:
            if (height % 2 || width % 2)
                throw std::invalid_argument("descriptor: bayer needs even height and width");
            if (channels != 3)
                throw std::invalid_argument("descriptor: bayer needs 3 channels");
            break;
        case OpKind::inpaint_block:
            if (block_size <= 0 || block_size > height || block_size > width)
                throw std::invalid_argument("descriptor: inpaint block does not fit the image");
            break;
        case OpKind::random_mask:
            if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
                throw std::invalid_argument("descriptor: keep_fraction must be in (0,1]");
            break;
        case OpKind::freq_lowpass:
            if (!(drop_fraction >= 0.0 && drop_fraction < 1.0))
                throw std::invalid_argument("descriptor: drop_fraction must be in [0,1)");
            break;
        case OpKind::random_basis: {
            long hw = static_cast<long>(height) * width;
            long k = subspace_dim > 0 ? subspace_dim : std::lround(hw / 5.0);
            if (k <= 0 || k > hw)
                throw std::invalid_argument("descriptor: subspace_dim must be in [1, H*W]");
            break;
        }
    }
}

nlohmann::json OperatorDescriptor::to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["dims"] = {channels, height, width};
    j["seed"] = seed;
    switch (kind) {
        case OpKind::inpaint_block: j["block_size"] = block_size; break;
        case OpKind::random_mask: j["keep_fraction"] = keep_fraction; break;
        case OpKind::freq_lowpass: j["drop_fraction"] = drop_fraction; break;
        case OpKind::random_basis: j["subspace_dim"] = subspace_dim; break;
        default: break;
    }
    return j;
}

OperatorDescriptor OperatorDescriptor::from_json(const nlohmann::json& j) {
    OperatorDescriptor d;
    d.kind = op_kind_from_string(j.at("kind").get<std::string>());
    auto dims = j.at("dims");
    d.channels = dims.at(0).get<int>();
    d.height = dims.at(1).get<int>();
    d.width = dims.at(2).get<int>();
    d.seed = j.value("seed", uint64_t(0));
    d.block_size = j.value("block_size", 16);
    d.keep_fraction = j.value("keep_fraction", 0.10);
    d.drop_fraction = j.value("drop_fraction", 0.20);
    d.subspace_dim = j.value("subspace_dim", 0);
    d.validate();
    return d;
}

void LinearMeasurement::check_image(int c, int h, int w) const {
    if (c != desc_.channels || h != desc_.height || w != desc_.width)
        throw std::invalid_argument("operator: image dimension mismatch");
}

std::vector<double> LinearMeasurement::measure(const Tensor<double>& x) const {
    check_image(x.channels, x.height, x.width);
    std::vector<double> xc(dim_);
    measure_raw(x.data(), xc.data());
    return xc;
}

Tensor<double> LinearMeasurement::lift(const std::vector<double>& xc) const {
    if (static_cast<int>(xc.size()) != dim_)
        throw std::invalid_argument("operator: measurement dimension mismatch");
    Tensor<double> out(desc_.channels, desc_.height, desc_.width);
    lift_raw(xc.data(), out.data());
    return out;
}

Tensor<double> LinearMeasurement::project(const Tensor<double>& x) const {
    return lift(measure(x));
}

std::vector<std::vector<double>> LinearMeasurement::to_dense() const {
    size_t n = image_size();
    if (n > 4096) throw std::invalid_argument("to_dense: instance too large (> 4096 entries)");
    std::vector<std::vector<double>> m(dim_, std::vector<double>(n, 0.0));
    std::vector<double> basis(n, 0.0), col(dim_);
    for (size_t j = 0; j < n; ++j) {
        basis[j] = 1.0;
        measure_raw(basis.data(), col.data());
        basis[j] = 0.0;
        for (int i = 0; i < dim_; ++i) m[i][j] = col[i];
    }
    return m;
}

namespace {

// ---- sr2: orthonormal 2x2 block averaging ----------------------------------
// M^T has entries 1/2 over each 2x2 block (so M^T M = I); M = its transpose.
class Sr2Op final : public LinearMeasurement {
  public:
    explicit Sr2Op(const OperatorDescriptor& d)
        : LinearMeasurement(d, d.channels * (d.height / 2) * (d.width / 2)) {}

    void measure_raw(const double* x, double* xc) const override {
        const int H = desc_.height, W = desc_.width;
        size_t k = 0;
        for (int c = 0; c < desc_.channels; ++c) {
            const double* plane = x + static_cast<size_t>(c) * H * W;
            for (int by = 0; by < H; by += 2)
                for (int bx = 0; bx < W; bx += 2)
                    xc[k++] = 0.5 * (plane[by * W + bx] + plane[by * W + bx + 1] +
                                     plane[(by + 1) * W + bx] + plane[(by + 1) * W + bx + 1]);
        }
    }

    void lift_raw(const double* xc, double* x) const override {
        const int H = desc_.height, W = desc_.width;
        size_t k = 0;
        for (int c = 0; c < desc_.channels; ++c) {
            double* plane = x + static_cast<size_t>(c) * H * W;
            for (int by = 0; by < H; by += 2)
                for (int bx = 0; bx < W; bx += 2) {
                    double v = 0.5 * xc[k++];
                    plane[by * W + bx] = v;
                    plane[by * W + bx + 1] = v;
                    plane[(by + 1) * W + bx] = v;
                    plane[(by + 1) * W + bx + 1] = v;
                }
        }
    }
};

// ---- pixel-selection operators (inpaint_block, random_mask, bayer) ---------
// M^T gathers kept entries in ascending flat-index order; M scatters them back
// with zeros elsewhere.
class SelectionOp final : public LinearMeasurement {
  public:
    SelectionOp(const OperatorDescriptor& d, std::vector<size_t> kept)
        : LinearMeasurement(d, static_cast<int>(kept.size())), kept_(std::move(kept)) {}

    void measure_raw(const double* x, double* xc) const override {
        for (size_t i = 0; i < kept_.size(); ++i) xc[i] = x[kept_[i]];
    }

    void lift_raw(const double* xc, double* x) const override {
        std::memset(x, 0, image_size() * sizeof(double));
        for (size_t i = 0; i < kept_.size(); ++i) x[kept_[i]] = xc[i];
    }

  private:
    std::vector<size_t> kept_;
};

std::vector<size_t> expand_kept_pixels(const std::vector<char>& pixel_kept, int channels,
                                       size_t hw) {
    std::vector<size_t> kept;
    for (int c = 0; c < channels; ++c)
        for (size_t p = 0; p < hw; ++p)
            if (pixel_kept[p]) kept.push_back(static_cast<size_t>(c) * hw + p);
    return kept;
}

std::unique_ptr<LinearMeasurement> make_inpaint(const OperatorDescriptor& d) {
    const int b = d.block_size;
    Rng rng(d.seed);
    int by = static_cast<int>(rng.below(d.height - b + 1));
    int bx = static_cast<int>(rng.below(d.width - b + 1));
    std::vector<char> pixel_kept(static_cast<size_t>(d.height) * d.width, 1);
    for (int y = by; y < by + b; ++y)
        for (int x = bx; x < bx + b; ++x) pixel_kept[static_cast<size_t>(y) * d.width + x] = 0;
    return std::make_unique<SelectionOp>(
        d, expand_kept_pixels(pixel_kept, d.channels, pixel_kept.size()));
}

std::unique_ptr<LinearMeasurement> make_random_mask(const OperatorDescriptor& d) {
    size_t hw = static_cast<size_t>(d.height) * d.width;
    size_t n_keep = static_cast<size_t>(std::lround(d.keep_fraction * double(hw)));
    n_keep = std::max<size_t>(1, std::min(n_keep, hw));
    std::vector<size_t> idx(hw);
    for (size_t i = 0; i < hw; ++i) idx[i] = i;
    Rng rng(d.seed);
    rng.shuffle(idx);
    std::vector<char> pixel_kept(hw, 0);
    for (size_t i = 0; i < n_keep; ++i) pixel_kept[idx[i]] = 1;
    return std::make_unique<SelectionOp>(d, expand_kept_pixels(pixel_kept, d.channels, hw));
}

std::unique_ptr<LinearMeasurement> make_bayer(const OperatorDescriptor& d) {
    // RGGB: R at (0,0), G at (0,1) and (1,0), B at (1,1) of each 2x2 block.
    size_t hw = static_cast<size_t>(d.height) * d.width;
    std::vector<size_t> kept;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) {
                bool keep = (c == 0 && y % 2 == 0 && x % 2 == 0) ||
                            (c == 1 && y % 2 != x % 2) ||
                            (c == 2 && y % 2 == 1 && x % 2 == 1);
                if (keep) kept.push_back(static_cast<size_t>(c) * hw + y * d.width + x);
            }
    std::sort(kept.begin(), kept.end());
    return std::make_unique<SelectionOp>(d, std::move(kept));
}

// ---- freq_lowpass -----------------------------------------------------------
// Restriction of the orthonormal 2D DFT to the lowest-frequency rings. Ring
// distance is max of the centered |u|,|v|; whole rings are kept so the set is
// conjugate-symmetric and the lifted image is exactly real. Each conjugate
// pair contributes two real coordinates (sqrt2*Re, sqrt2*Im of the canonical
// member); self-conjugate coefficients contribute their real part.
class FreqLowpassOp final : public LinearMeasurement {
  public:
    struct Layout {
        std::vector<size_t> self;                      // self-conjugate kept coefficients
        std::vector<std::pair<size_t, size_t>> pairs;  // (canonical, partner)
        int per_channel_dim = 0;
    };

    FreqLowpassOp(const OperatorDescriptor& d, Layout layout)
        : LinearMeasurement(d, d.channels * layout.per_channel_dim), layout_(std::move(layout)) {
        const int H = desc_.height, W = desc_.width;
        std::lock_guard<std::mutex> lock(plan_mutex());
        buf_ = fftw_alloc_complex(static_cast<size_t>(H) * W);
        fwd_ = fftw_plan_dft_2d(H, W, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        bwd_ = fftw_plan_dft_2d(H, W, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }

    ~FreqLowpassOp() override {
        std::lock_guard<std::mutex> lock(plan_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(buf_);
    }

    void measure_raw(const double* x, double* xc) const override {
        const int H = desc_.height, W = desc_.width;
        const size_t hw = static_cast<size_t>(H) * W;
        const double scale = 1.0 / std::sqrt(double(hw));
        const double sqrt2 = std::sqrt(2.0);
        std::vector<fftw_complex> buf(hw);
        for (int c = 0; c < desc_.channels; ++c) {
            const double* plane = x + c * hw;
            for (size_t i = 0; i < hw; ++i) {
                buf[i][0] = plane[i];
                buf[i][1] = 0.0;
            }
            fftw_execute_dft(fwd_, buf.data(), buf.data());
            double* out = xc + static_cast<size_t>(c) * layout_.per_channel_dim;
            size_t k = 0;
            for (size_t idx : layout_.self) out[k++] = scale * buf[idx][0];
            for (auto [rep, part] : layout_.pairs) {
                (void)part;
                out[k++] = sqrt2 * scale * buf[rep][0];
                out[k++] = sqrt2 * scale * buf[rep][1];
            }
        }
    }

    void lift_raw(const double* xc, double* x) const override {
        const int H = desc_.height, W = desc_.width;
        const size_t hw = static_cast<size_t>(H) * W;
        const double scale = 1.0 / std::sqrt(double(hw));
        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        std::vector<fftw_complex> buf(hw);
        for (int c = 0; c < desc_.channels; ++c) {
            std::memset(buf.data(), 0, hw * sizeof(fftw_complex));
            const double* in = xc + static_cast<size_t>(c) * layout_.per_channel_dim;
            size_t k = 0;
            for (size_t idx : layout_.self) buf[idx][0] = in[k++];
            for (auto [rep, part] : layout_.pairs) {
                double re = inv_sqrt2 * in[k++];
                double im = inv_sqrt2 * in[k++];
                buf[rep][0] = re;
                buf[rep][1] = im;
                buf[part][0] = re;
                buf[part][1] = -im;
            }
            fftw_execute_dft(bwd_, buf.data(), buf.data());
            double* plane = x + c * hw;
            for (size_t i = 0; i < hw; ++i) plane[i] = scale * buf[i][0];
        }
    }

    static Layout build_layout(const OperatorDescriptor& d) {
        const int H = d.height, W = d.width;
        const size_t hw = static_cast<size_t>(H) * W;
        auto centered = [](int u, int n) { return std::min(u, n - u); };
        // Smallest ring radius whose cumulative count covers the kept fraction.
        std::vector<int> ring(hw);
        std::vector<size_t> count_by_ring(std::max(H, W) / 2 + 1, 0);
        for (int u = 0; u < H; ++u)
            for (int v = 0; v < W; ++v) {
                int r = std::max(centered(u, H), centered(v, W));
                ring[static_cast<size_t>(u) * W + v] = r;
                count_by_ring[r]++;
            }
        size_t target = static_cast<size_t>(std::lround((1.0 - d.drop_fraction) * double(hw)));
        target = std::max<size_t>(1, target);
        size_t cum = 0;
        int rmax = 0;
        for (size_t r = 0; r < count_by_ring.size(); ++r) {
            cum += count_by_ring[r];
            if (cum >= target) {
                rmax = static_cast<int>(r);
                break;
            }
        }
        Layout layout;
        for (int u = 0; u < H; ++u)
            for (int v = 0; v < W; ++v) {
                size_t idx = static_cast<size_t>(u) * W + v;
                if (ring[idx] > rmax) continue;
                int uc = (H - u) % H, vc = (W - v) % W;
                size_t partner = static_cast<size_t>(uc) * W + vc;
                if (partner == idx)
                    layout.self.push_back(idx);
                else if (idx < partner)
                    layout.pairs.emplace_back(idx, partner);
            }
        layout.per_channel_dim =
            static_cast<int>(layout.self.size() + 2 * layout.pairs.size());
        return layout;
    }

  private:
    static std::mutex& plan_mutex() {
        static std::mutex m;
        return m;
    }

    Layout layout_;
    fftw_complex* buf_;
    fftw_plan fwd_;
    fftw_plan bwd_;
};

// ---- random_basis -----------------------------------------------------------
// K orthonormal rows from the QR factorization of a seeded standard-normal
// HW x K matrix; the same basis is applied to every channel.
class RandomBasisOp final : public LinearMeasurement {
  public:
    RandomBasisOp(const OperatorDescriptor& d, Eigen::MatrixXd basis)
        : LinearMeasurement(d, d.channels * static_cast<int>(basis.rows())),
          basis_(std::move(basis)) {}

    void measure_raw(const double* x, double* xc) const override {
        const size_t hw = static_cast<size_t>(desc_.height) * desc_.width;
        const int k = static_cast<int>(basis_.rows());
        for (int c = 0; c < desc_.channels; ++c) {
            Eigen::Map<const Eigen::VectorXd> xv(x + c * hw, hw);
            Eigen::Map<Eigen::VectorXd> out(xc + static_cast<size_t>(c) * k, k);
            out = basis_ * xv;
        }
    }

    void lift_raw(const double* xc, double* x) const override {
        const size_t hw = static_cast<size_t>(desc_.height) * desc_.width;
        const int k = static_cast<int>(basis_.rows());
        for (int c = 0; c < desc_.channels; ++c) {
            Eigen::Map<const Eigen::VectorXd> in(xc + static_cast<size_t>(c) * k, k);
            Eigen::Map<Eigen::VectorXd> xv(x + c * hw, hw);
            xv = basis_.transpose() * in;
        }
    }

    static Eigen::MatrixXd build_basis(const OperatorDescriptor& d) {
        const long hw = static_cast<long>(d.height) * d.width;
        const long k = d.subspace_dim > 0 ? d.subspace_dim : std::lround(double(hw) / 5.0);
        Rng rng(d.seed);
        Eigen::MatrixXd g(hw, k);
        for (long j = 0; j < k; ++j)
            for (long i = 0; i < hw; ++i) g(i, j) = rng.normal();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(hw, k);
        // Canonical sign: positive diagonal of R.
        Eigen::MatrixXd r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
        for (long j = 0; j < k; ++j)
            if (r(j, j) < 0) q.col(j) = -q.col(j);
        return q.transpose();
    }

  private:
    Eigen::MatrixXd basis_;  // K x HW, orthonormal rows
};

}  // namespace

std::unique_ptr<LinearMeasurement> make_operator(const OperatorDescriptor& desc) {
    desc.validate();
    switch (desc.kind) {
        case OpKind::sr2: return std::make_unique<Sr2Op>(desc);
        case OpKind::inpaint_block: return make_inpaint(desc);
        case OpKind::random_mask: return make_random_mask(desc);
        case OpKind::bayer: return make_bayer(desc);
        case OpKind::freq_lowpass:
            return std::make_unique<FreqLowpassOp>(desc, FreqLowpassOp::build_layout(desc));
        case OpKind::random_basis:
            return std::make_unique<RandomBasisOp>(desc, RandomBasisOp::build_basis(desc));
    }
    throw std::logic_error("bad OpKind");
}

}  // namespace tws

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tws/tensor.hpp"

namespace tws {

enum class OpKind { sr2, inpaint_block, random_mask, bayer, freq_lowpass, random_basis };

std::string to_string(OpKind k);
OpKind op_kind_from_string(const std::string& s);

// Fully determines a measurement operator: same descriptor (including seed)
// reconstructs identical matrices.
struct OperatorDescriptor {
    OpKind kind = OpKind::sr2;
    int channels = 1;
    int height = 0;
    int width = 0;
    int block_size = 16;         // inpaint_block
    double keep_fraction = 0.10; // random_mask
    double drop_fraction = 0.20; // freq_lowpass
    int subspace_dim = 0;        // random_basis; 0 means round(HW/5)
    uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument on a bad descriptor
    nlohmann::json to_json() const;
    static OperatorDescriptor from_json(const nlohmann::json& j);
};

// Semi-orthogonal operator triple: measure applies M^T, lift applies its
// pseudo-inverse M, project = M M^T. Immutable and safe for concurrent use.
class LinearMeasurement {
  public:
    virtual ~LinearMeasurement() = default;

    const OperatorDescriptor& descriptor() const { return desc_; }
    int dim() const { return dim_; }
    size_t image_size() const {
        return static_cast<size_t>(desc_.channels) * desc_.height * desc_.width;
    }

    virtual void measure_raw(const double* x, double* xc) const = 0;
    virtual void lift_raw(const double* xc, double* x) const = 0;

    std::vector<double> measure(const Tensor<double>& x) const;
    Tensor<double> lift(const std::vector<double>& xc) const;
    Tensor<double> project(const Tensor<double>& x) const;

    // Explicit K x CHW matrix of measure, row-major. Test oracle for small
    // instances only.
    std::vector<std::vector<double>> to_dense() const;

  protected:
    LinearMeasurement(const OperatorDescriptor& d, int dim) : desc_(d), dim_(dim) {}
    void check_image(int c, int h, int w) const;

    OperatorDescriptor desc_;
    int dim_;
};

std::unique_ptr<LinearMeasurement> make_operator(const OperatorDescriptor& desc);

// Precision-converting wrappers for float pipelines.
template <typename T>
std::vector<T> measure(const LinearMeasurement& op, const Tensor<T>& x) {
    if (x.channels != op.descriptor().channels || x.height != op.descriptor().height ||
        x.width != op.descriptor().width)
        throw std::invalid_argument("measure: dimension mismatch");
    std::vector<double> xd(x.v.begin(), x.v.end());
    std::vector<double> xc(op.dim());
    op.measure_raw(xd.data(), xc.data());
    return std::vector<T>(xc.begin(), xc.end());
}

template <typename T>
Tensor<T> lift(const LinearMeasurement& op, const std::vector<T>& xc) {
    if (static_cast<int>(xc.size()) != op.dim())
        throw std::invalid_argument("lift: dimension mismatch");
    std::vector<double> xcd(xc.begin(), xc.end());
    Tensor<double> out(op.descriptor().channels, op.descriptor().height, op.descriptor().width);
    op.lift_raw(xcd.data(), out.data());
    return out.template cast<T>();
}

template <typename T>
Tensor<T> project(const LinearMeasurement& op, const Tensor<T>& x) {
    return lift<T>(op, measure<T>(op, x));
}

}  // namespace tws

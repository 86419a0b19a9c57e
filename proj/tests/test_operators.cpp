#include "tws/operators.hpp"

#include <cmath>

#include "doctest.h"
#include "tws/rng.hpp"

using namespace tws;

namespace {

OperatorDescriptor desc(OpKind kind, int c, int h, int w, uint64_t seed = 7) {
    OperatorDescriptor d;
    d.kind = kind;
    d.channels = c;
    d.height = h;
    d.width = w;
    d.seed = seed;
    return d;
}

Tensor<double> random_image(int c, int h, int w, Rng& rng) {
    Tensor<double> x(c, h, w);
    for (auto& v : x.v) v = rng.uniform();
    return x;
}

std::vector<OperatorDescriptor> all_kinds_16x16() {
    std::vector<OperatorDescriptor> ds;
    ds.push_back(desc(OpKind::sr2, 3, 16, 16));
    {
        auto d = desc(OpKind::inpaint_block, 3, 16, 16);
        d.block_size = 8;
        ds.push_back(d);
    }
    ds.push_back(desc(OpKind::random_mask, 3, 16, 16));
    ds.push_back(desc(OpKind::bayer, 3, 16, 16));
    ds.push_back(desc(OpKind::freq_lowpass, 3, 16, 16));
    ds.push_back(desc(OpKind::random_basis, 3, 16, 16));
    return ds;
}

}  // namespace

TEST_CASE("sr2 on constant images") {
    auto op = make_operator(desc(OpKind::sr2, 1, 2, 2));
    CHECK(op->dim() == 1);
    Tensor<double> ones(1, 2, 2);
    ones.fill(1.0);
    // constants are fixed points of project
    Tensor<double> p = op->project(ones);
    for (auto v : p.v) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sr2 block averaging by hand") {
    auto op = make_operator(desc(OpKind::sr2, 1, 2, 2));
    Tensor<double> x(1, 2, 2);
    x.at(0, 0, 0) = 0;
    x.at(0, 0, 1) = 2;
    x.at(0, 1, 0) = 2;
    x.at(0, 1, 1) = 0;
    Tensor<double> p = op->project(x);
    for (auto v : p.v) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sr2 project replaces each 2x2 block by its mean (4x4 vs dense)") {
    auto op = make_operator(desc(OpKind::sr2, 1, 4, 4));
    Rng rng(3);
    Tensor<double> x = random_image(1, 4, 4, rng);
    Tensor<double> p = op->project(x);
    for (int by = 0; by < 4; by += 2)
        for (int bx = 0; bx < 4; bx += 2) {
            double mean = (x.at(0, by, bx) + x.at(0, by, bx + 1) + x.at(0, by + 1, bx) +
                           x.at(0, by + 1, bx + 1)) / 4.0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    CHECK(p.at(0, by + dy, bx + dx) == doctest::Approx(mean).epsilon(1e-12));
        }
}

TEST_CASE("random_mask keep fraction counts") {
    auto d = desc(OpKind::random_mask, 1, 32, 32);
    d.keep_fraction = 0.10;
    auto op = make_operator(d);
    CHECK(op->dim() == 102);
    Rng rng(9);
    Tensor<double> x = random_image(1, 32, 32, rng);
    Tensor<double> p = op->project(x);
    int zeros = 0;
    for (auto v : p.v)
        if (v == 0.0) ++zeros;
    CHECK(zeros == 922);
}

TEST_CASE("random_mask measure is selection in index order (dense oracle 8x8)") {
    auto d = desc(OpKind::random_mask, 1, 8, 8);
    d.keep_fraction = 0.10;
    auto op = make_operator(d);
    auto dense = op->to_dense();
    Rng rng(11);
    Tensor<double> x = random_image(1, 8, 8, rng);
    auto xc = op->measure(x);
    // every dense row selects exactly one pixel
    size_t prev = 0;
    for (size_t i = 0; i < dense.size(); ++i) {
        int ones = 0;
        size_t idx = 0;
        for (size_t j = 0; j < dense[i].size(); ++j)
            if (dense[i][j] != 0.0) {
                ++ones;
                idx = j;
                CHECK(dense[i][j] == 1.0);
            }
        CHECK(ones == 1);
        if (i > 0) CHECK(idx > prev);  // ascending index order
        prev = idx;
        CHECK(xc[i] == x.v[idx]);
    }
}

TEST_CASE("bayer 3x2x2 has K=4 and keeps RGGB sites") {
    auto op = make_operator(desc(OpKind::bayer, 3, 2, 2));
    CHECK(op->dim() == 4);
    Rng rng(5);
    Tensor<double> x = random_image(3, 2, 2, rng);
    Tensor<double> p = op->project(x);
    CHECK(p.at(0, 0, 0) == x.at(0, 0, 0));
    CHECK(p.at(1, 0, 1) == x.at(1, 0, 1));
    CHECK(p.at(1, 1, 0) == x.at(1, 1, 0));
    CHECK(p.at(2, 1, 1) == x.at(2, 1, 1));
    // everything else zeroed
    CHECK(p.at(0, 0, 1) == 0.0);
    CHECK(p.at(0, 1, 1) == 0.0);
    CHECK(p.at(1, 0, 0) == 0.0);
    CHECK(p.at(2, 0, 0) == 0.0);
}

TEST_CASE("measure of zero image is zero") {
    for (const auto& d : all_kinds_16x16()) {
        auto op = make_operator(d);
        Tensor<double> zero(3, 16, 16);
        for (auto v : op->measure(zero)) CHECK(v == 0.0);
    }
}

TEST_CASE("freq_lowpass of a constant image is DC-only") {
    auto op = make_operator(desc(OpKind::freq_lowpass, 1, 16, 16));
    Tensor<double> x(1, 16, 16);
    x.fill(0.75);
    auto xc = op->measure(x);
    int nonzero = 0;
    for (auto v : xc)
        if (std::abs(v) > 1e-9) ++nonzero;
    CHECK(nonzero == 1);
    CHECK(xc[0] == doctest::Approx(0.75 * 16.0).epsilon(1e-12));  // DC = mean * sqrt(HW)
}

TEST_CASE("inpaint_block lift zeroes exactly the masked block") {
    auto d = desc(OpKind::inpaint_block, 1, 32, 32);
    d.block_size = 16;
    auto op = make_operator(d);
    Rng rng(2);
    Tensor<double> x = random_image(1, 32, 32, rng);
    Tensor<double> p = op->project(x);
    int zeros = 0;
    for (auto v : p.v)
        if (v == 0.0) ++zeros;
    CHECK(zeros == 16 * 16);
}

TEST_CASE("random_basis lift is an isometry") {
    auto op = make_operator(desc(OpKind::random_basis, 1, 16, 16));
    CHECK(op->dim() == 51);  // round(256/5)
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(op->dim());
        for (auto& e : v) e = rng.normal();
        Tensor<double> img = op->lift(v);
        double nv = 0;
        for (auto e : v) nv += e * e;
        CHECK(img.norm2() == doctest::Approx(std::sqrt(nv)).epsilon(1e-6));
    }
}

TEST_CASE("semi-orthogonality: measure(lift(v)) = v for all kinds") {
    Rng rng(23);
    for (const auto& d : all_kinds_16x16()) {
        auto op = make_operator(d);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> v(op->dim());
            for (auto& e : v) e = rng.normal();
            auto back = op->measure(op->lift(v));
            double err = 0;
            for (size_t i = 0; i < v.size(); ++i) err = std::max(err, std::abs(back[i] - v[i]));
            CHECK(err < 1e-5);
        }
    }
}

TEST_CASE("project is idempotent and self-adjoint") {
    Rng rng(31);
    for (const auto& d : all_kinds_16x16()) {
        auto op = make_operator(d);
        for (int trial = 0; trial < 100; ++trial) {
            Tensor<double> a = random_image(3, 16, 16, rng);
            Tensor<double> b = random_image(3, 16, 16, rng);
            Tensor<double> pa = op->project(a);
            CHECK((op->project(pa) - pa).max_abs() < 1e-5);
            CHECK(std::abs(dot(pa, b) - dot(a, op->project(b))) < 1e-6);
        }
    }
}

TEST_CASE("freq_lowpass projection of real input is real-valued by construction") {
    // lift goes through an inverse FFT; the conjugate-symmetric kept set means
    // round-tripping twice changes nothing beyond fp noise.
    auto op = make_operator(desc(OpKind::freq_lowpass, 3, 16, 16));
    Rng rng(37);
    Tensor<double> x = random_image(3, 16, 16, rng);
    Tensor<double> p = op->project(x);
    Tensor<double> pp = op->project(p);
    CHECK((pp - p).max_abs() < 1e-6);
}

TEST_CASE("implicit application matches dense matrices") {
    Rng rng(41);
    for (const auto& d : all_kinds_16x16()) {
        auto op = make_operator(d);
        auto dense = op->to_dense();
        Tensor<double> x = random_image(3, 16, 16, rng);
        auto xc = op->measure(x);
        for (int i = 0; i < op->dim(); ++i) {
            double acc = 0;
            for (size_t j = 0; j < x.size(); ++j) acc += dense[i][j] * x.v[j];
            CHECK(std::abs(acc - xc[i]) < 1e-6);
        }
        // lift vs dense transpose
        std::vector<double> v(op->dim());
        for (auto& e : v) e = rng.normal();
        Tensor<double> img = op->lift(v);
        for (size_t j = 0; j < img.size(); ++j) {
            double acc = 0;
            for (int i = 0; i < op->dim(); ++i) acc += dense[i][j] * v[i];
            CHECK(std::abs(acc - img.v[j]) < 1e-6);
        }
    }
}

TEST_CASE("dense sr2 2x2 satisfies M^T (M^T)^T = I") {
    auto op = make_operator(desc(OpKind::sr2, 1, 2, 2));
    auto dense = op->to_dense();
    REQUIRE(dense.size() == 1);
    double g = 0;
    for (double v : dense[0]) g += v * v;
    CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dense random_basis rows are orthonormal") {
    auto d = desc(OpKind::random_basis, 1, 8, 8);
    d.subspace_dim = 12;
    auto op = make_operator(d);
    auto dense = op->to_dense();
    REQUIRE(dense.size() == 12);
    for (size_t i = 0; i < dense.size(); ++i)
        for (size_t j = 0; j <= i; ++j) {
            double g = 0;
            for (size_t k = 0; k < dense[i].size(); ++k) g += dense[i][k] * dense[j][k];
            CHECK(std::abs(g - (i == j ? 1.0 : 0.0)) < 1e-8);
        }
}

TEST_CASE("dense freq_lowpass rows have unit norm") {
    auto op = make_operator(desc(OpKind::freq_lowpass, 1, 8, 8));
    auto dense = op->to_dense();
    for (const auto& row : dense) {
        double g = 0;
        for (double v : row) g += v * v;
        CHECK(g == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("identical descriptor gives identical dense matrices") {
    for (auto kind : {OpKind::inpaint_block, OpKind::random_mask, OpKind::random_basis}) {
        auto d = desc(kind, 1, 8, 8, 99);
        if (kind == OpKind::inpaint_block) d.block_size = 4;
        if (kind == OpKind::random_basis) d.subspace_dim = 10;
        auto a = make_operator(d)->to_dense();
        auto b = make_operator(d)->to_dense();
        CHECK(a == b);
    }
}

TEST_CASE("descriptor errors") {
    CHECK_THROWS_AS(make_operator(desc(OpKind::sr2, 1, 3, 4)), std::invalid_argument);
    CHECK_THROWS_AS(make_operator(desc(OpKind::bayer, 3, 4, 5)), std::invalid_argument);
    CHECK_THROWS_AS(make_operator(desc(OpKind::bayer, 1, 4, 4)), std::invalid_argument);
    auto d = desc(OpKind::random_mask, 1, 8, 8);
    d.keep_fraction = 0.0;
    CHECK_THROWS_AS(make_operator(d), std::invalid_argument);
    d.keep_fraction = 1.5;
    CHECK_THROWS_AS(make_operator(d), std::invalid_argument);
    auto b = desc(OpKind::inpaint_block, 1, 8, 8);
    b.block_size = 16;
    CHECK_THROWS_AS(make_operator(b), std::invalid_argument);
    auto r = desc(OpKind::random_basis, 1, 8, 8);
    r.subspace_dim = 65;
    CHECK_THROWS_AS(make_operator(r), std::invalid_argument);
}

TEST_CASE("dimension mismatch errors") {
    auto op = make_operator(desc(OpKind::sr2, 1, 4, 4));
    Tensor<double> wrong(1, 6, 6);
    CHECK_THROWS_AS(op->measure(wrong), std::invalid_argument);
    std::vector<double> bad(op->dim() + 1);
    CHECK_THROWS_AS(op->lift(bad), std::invalid_argument);
}

TEST_CASE("to_dense rejects large instances") {
    auto op = make_operator(desc(OpKind::sr2, 3, 64, 64));
    CHECK_THROWS_AS(op->to_dense(), std::invalid_argument);
}

TEST_CASE("descriptor JSON round trip") {
    auto d = desc(OpKind::random_mask, 1, 32, 48, 1234);
    d.keep_fraction = 0.25;
    auto j = d.to_json();
    auto back = OperatorDescriptor::from_json(j);
    CHECK(back.kind == d.kind);
    CHECK(back.channels == d.channels);
    CHECK(back.height == d.height);
    CHECK(back.width == d.width);
    CHECK(back.seed == d.seed);
    CHECK(back.keep_fraction == d.keep_fraction);
    CHECK(make_operator(back)->to_dense() == make_operator(d)->to_dense());
}

TEST_CASE("keep-everything random_mask is the identity projection") {
    auto d = desc(OpKind::random_mask, 1, 8, 8);
    d.keep_fraction = 1.0;
    auto op = make_operator(d);
    Rng rng(77);
    Tensor<double> x = random_image(1, 8, 8, rng);
    CHECK((op->project(x) - x).max_abs() == 0.0);
}

// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "alignhuman/autodiff.hpp"
#include "alignhuman/rng.hpp"

namespace {

using namespace alignhuman;
using namespace alignhuman::ad;

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (double& x : t.data) x = uniform(rng, lo, hi);
    return t;
}

TEST(Autodiff, SiluOfZeroIsZero) {
    Tape tape;
    Var y = silu(tape.leaf(Tensor::scalar(0.0)));
    EXPECT_DOUBLE_EQ(y.value()[0], 0.0);
}

TEST(Autodiff, IdentityMatmulReturnsInput) {
    Tape tape;
    Var id = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    Var x = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    EXPECT_EQ(matmul(id, x).value(), Tensor::matrix(2, 2, {1, 2, 3, 4}));
}

TEST(Autodiff, SumOfSquares) {
    Tape tape;
    Var y = sum(square(tape.leaf(Tensor::vector({1, 2, 3}))));
    EXPECT_DOUBLE_EQ(y.value()[0], 14.0);
}

TEST(Autodiff, DerivativeOfSquareAtThree) {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    Var y = square(x);
    tape.backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, NegLogSigmoidGradientAtZero) {
    Tape tape;
    Var w = tape.leaf(Tensor::scalar(0.0));
    Var x = tape.constant(Tensor::scalar(1.0));
    Var y = scale(log(sigmoid(w * x)), -1.0);
    tape.backward(y);
    EXPECT_NEAR(w.grad()[0], -0.5, 1e-12);
}

TEST(Autodiff, LinearMseGradientMatchesCentralDifferences) {
    const Tensor x = random_tensor({4, 3}, 11);
    const Tensor target = random_tensor({4, 2}, 12);
    const ScalarFn fn = [&](Tape& t, Var w) {
        Var pred = matmul(t.constant(x), w);
        return mean(square(pred - t.constant(target)));
    };
    EXPECT_LT(grad_check(fn, random_tensor({3, 2}, 13), 1e-5), 1e-5);
}

TEST(Autodiff, GradCheckOnSimpleFunctions) {
    const ScalarFn sq = [](Tape&, Var x) { return sum(square(x)); };
    EXPECT_LT(grad_check(sq, Tensor::vector({1.0, 2.0}), 1e-5), 1e-8);

    const ScalarFn sl = [](Tape&, Var x) { return sum(silu(x)); };
    EXPECT_LT(grad_check(sl, random_tensor({16}, 21, -3.0, 3.0), 1e-5), 1e-6);

    const ScalarFn constant = [](Tape& t, Var x) { return sum(scale(x, 0.0)) + t.constant(Tensor::scalar(5.0)); };
    EXPECT_EQ(grad_check(constant, Tensor::vector({0.3, -0.7}), 1e-5), 0.0);
}

TEST(Autodiff, GradCheckRejectsNonPositiveStep) {
    const ScalarFn sq = [](Tape&, Var x) { return sum(square(x)); };
    EXPECT_THROW(grad_check(sq, Tensor::vector({1.0}), 0.0), InvalidArgument);
}

TEST(Autodiff, GradCheckRejectsCoordinateOutOfRange) {
    const ScalarFn sq = [](Tape&, Var x) { return sum(square(x)); };
    const std::vector<std::size_t> coords{0, 2};
    EXPECT_THROW(grad_check(sq, Tensor::vector({1.0, 2.0}), 1e-5, coords), InvalidArgument);
}

TEST(Autodiff, GradCheckNamesCoordinateOfNonFiniteProbe) {
    // Finite at the point, overflows once the coordinate is nudged up.
    const ScalarFn fn = [](Tape&, Var x) { return sum(scale(square(x), 1e308)); };
    const Tensor point = Tensor::vector({0.0, std::sqrt(1.7976931)});
    try {
        grad_check(fn, point, 1e-4);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos) << e.what();
    }
}

struct PrimitiveCase {
    const char* name;
    ScalarFn fn;
    Shape shape;
    double lo, hi;
};

TEST(Autodiff, EveryPrimitiveMatchesCentralDifferences) {
    const Tensor m34 = random_tensor({3, 4}, 31);
    const Tensor m42 = random_tensor({4, 2}, 32);
    const Tensor m23 = random_tensor({2, 3}, 33);
    const Tensor v4 = random_tensor({4}, 34);
    const Tensor w4 = random_tensor({4}, 35);
    const std::vector<PrimitiveCase> cases = {
        {"matmul_left", [&](Tape& t, Var x) { return sum(sin(matmul(x, t.constant(m42)))); }, {3, 4}, -1, 1},
        {"matmul_right", [&](Tape& t, Var x) { return sum(sin(matmul(t.constant(m34), x))); }, {4, 2}, -1, 1},
        {"matmul_nt_left", [&](Tape& t, Var x) { return sum(sin(matmul_nt(x, t.constant(m23)))); }, {4, 3}, -1, 1},
        {"matmul_nt_right", [&](Tape& t, Var x) { return sum(sin(matmul_nt(t.constant(m34), x))); }, {2, 4}, -1, 1},
        {"add", [&](Tape& t, Var x) { return sum(square(x + t.constant(v4))); }, {4}, -1, 1},
        {"add_row_broadcast_matrix", [&](Tape& t, Var x) { return sum(square(x + t.constant(v4))); }, {3, 4}, -1, 1},
        {"add_row_broadcast_vector", [&](Tape& t, Var x) { return sum(square(t.constant(m34) + x)); }, {4}, -1, 1},
        {"mul", [&](Tape& t, Var x) { return sum(sin(x * t.constant(w4))); }, {4}, -1, 1},
        {"mul_self", [](Tape&, Var x) { return sum(x * x); }, {4}, -1, 1},
        {"concat_vector", [&](Tape& t, Var x) { return sum(square(concat(x, t.constant(v4)))); }, {3}, -1, 1},
        {"concat_matrix", [&](Tape& t, Var x) { return sum(sin(concat(t.constant(m34), x))); }, {3, 2}, -1, 1},
        {"silu", [](Tape&, Var x) { return sum(silu(x)); }, {6}, -4, 4},
        {"sin", [](Tape&, Var x) { return sum(sin(x)); }, {6}, -4, 4},
        {"sum", [](Tape&, Var x) { return square(sum(x)); }, {2, 3}, -1, 1},
        {"mean", [](Tape&, Var x) { return square(mean(x)); }, {2, 3}, -1, 1},
        {"square", [](Tape&, Var x) { return sum(square(x)); }, {5}, -2, 2},
        {"scale", [](Tape&, Var x) { return sum(sin(scale(x, -2.5))); }, {5}, -1, 1},
        {"sigmoid", [](Tape&, Var x) { return sum(sigmoid(x)); }, {6}, -6, 6},
        {"log", [](Tape&, Var x) { return sum(log(x)); }, {6}, 0.2, 3},
    };
    for (const auto& c : cases) {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Tensor point = random_tensor(c.shape, 100 + s, c.lo, c.hi);
            EXPECT_LT(grad_check(c.fn, point, 1e-5), 1e-5) << c.name << " point " << s;
        }
    }
}

TEST(Autodiff, GradientIsLinearInTheLoss) {
    const Tensor point = random_tensor({5}, 41);
    auto grad_of = [&](double a, double b) {
        Tape tape;
        Var x = tape.leaf(point);
        Var f = sum(sin(x));
        Var g = sum(square(x));
        Var y = scale(f, a) + scale(g, b);
        tape.backward(y);
        return x.grad();
    };
    const Tensor gf = grad_of(1.0, 0.0), gg = grad_of(0.0, 1.0), gc = grad_of(2.0, -3.0);
    for (std::size_t i = 0; i < point.size(); ++i) EXPECT_NEAR(gc[i], 2.0 * gf[i] - 3.0 * gg[i], 1e-12);
}

TEST(Autodiff, FanOutAccumulatesAdjoints) {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({-1.0, 0.5, 2.0}));
    tape.backward(sum(x * x + x));
    EXPECT_EQ(x.grad(), Tensor::vector({-1.0, 2.0, 5.0}));
}

TEST(Autodiff, SecondBackwardIsRejected) {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));
    Var y = square(x);
    tape.backward(y);
    EXPECT_THROW(tape.backward(y), InvalidArgument);
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
    EXPECT_THROW(tape.backward(square(x)), InvalidArgument);
}

TEST(Autodiff, GradBeforeBackwardIsRejected) {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(1.0));
    EXPECT_THROW(x.grad(), InvalidArgument);
}

TEST(Autodiff, ConstantsReportZeroGradient) {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
    Var c = tape.constant(Tensor::vector({3.0, 4.0}));
    tape.backward(sum(x * c));
    EXPECT_EQ(c.grad(), Tensor::vector({0.0, 0.0}));
    EXPECT_EQ(x.grad(), Tensor::vector({3.0, 4.0}));
}

TEST(Autodiff, ShapeMismatchNamesOperationAndShapes) {
    Tape tape;
    Var a = tape.leaf(Tensor::zeros({2, 3}));
    Var b = tape.leaf(Tensor::zeros({2, 3}));
    try {
        matmul(a, b);
        FAIL() << "expected InvalidArgument";
    } catch (const InvalidArgument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
        EXPECT_NE(msg.find(shape_str({2, 3})), std::string::npos) << msg;
    }
    EXPECT_THROW(mul(a, tape.leaf(Tensor::zeros({3}))), InvalidArgument);
    EXPECT_THROW(add(a, tape.leaf(Tensor::zeros({2}))), InvalidArgument);
}

TEST(Autodiff, InvalidTensorShapesAreRejected) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), InvalidArgument);
    EXPECT_THROW(Tensor(Shape{1, 2, 3}), InvalidArgument);
}

TEST(Autodiff, NonFiniteForwardValueNamesOperation) {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(1e200));
    try {
        square(x);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("square"), std::string::npos) << e.what();
    }
    EXPECT_THROW(tape.leaf(Tensor::scalar(std::nan(""))), NumericalError);
}

TEST(Autodiff, MixingTapesIsRejected) {
    Tape t1, t2;
    Var a = t1.leaf(Tensor::scalar(1.0));
    Var b = t2.leaf(Tensor::scalar(1.0));
    EXPECT_THROW(add(a, b), InvalidArgument);
}

} // namespace

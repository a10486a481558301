#include <cmath>
#include <limits>

#include "doctest.h"
#include "gradcheck.hpp"
#include "nfebench/autodiff.hpp"
#include "nfebench/error.hpp"

using namespace nfe;

TEST_SUITE("autodiff") {
    TEST_CASE("square of a scalar") {
        Tape tape;
        Var w = tape.leaf(Tensor::scalar(3.0), true);
        Var loss = sum(square(w));
        tape.backward(loss);
        CHECK(loss.value().item() == 9.0);
        CHECK(tape.grad(w).item() == 6.0);
    }

    TEST_CASE("linear map gradient is the input") {
        Tape tape;
        std::vector<double> wv{1, 2}, xv{3, 4};
        Var w = tape.leaf(Tensor::row(wv), true);
        Var x = tape.constant(Tensor::row(xv));
        tape.backward(sum(mul(w, x)));
        CHECK(tape.grad(w)[0] == 3.0);
        CHECK(tape.grad(w)[1] == 4.0);
        CHECK(tape.grad(x)[0] == 0.0);
    }

    TEST_CASE("every primitive matches central differences") {
        for (const auto& c : testing::primitive_cases()) {
            CAPTURE(c.name);
            CHECK(testing::max_grad_error(c.graph, c.inputs) < 1e-4);
        }
    }

    TEST_CASE("two-layer and four-layer MLPs match central differences") {
        for (int layers : {2, 4}) {
            auto c = testing::mlp_case(layers, 100 + layers);
            CAPTURE(layers);
            CHECK(testing::max_grad_error(c.graph, c.inputs) < 1e-4);
        }
    }

    TEST_CASE("detach blocks the gradient") {
        Tape tape;
        Var x = tape.leaf(Tensor::scalar(2.0), true);
        Var y = mul(x, detach(x));
        tape.backward(sum(y));
        CHECK(tape.grad(x).item() == 2.0);
    }

    TEST_CASE("shape mismatch names the op") {
        Tape tape;
        Var a = tape.leaf(Tensor::matrix(2, 3), true);
        Var b = tape.leaf(Tensor::matrix(2, 2), true);
        try {
            (void)add(a, b);
            FAIL("no throw");
        } catch (const ShapeError& e) {
            CHECK(e.op() == "add");
        }
        CHECK_THROWS_AS(matmul(a, a), ShapeError);
        CHECK_THROWS_AS(slice_cols(a, 2, 5), ShapeError);
    }

    TEST_CASE("non-finite values are rejected at the op") {
        Tape tape;
        Var a = tape.leaf(Tensor::scalar(std::numeric_limits<double>::max()), true);
        CHECK_THROWS_AS(square(a), NonFiniteError);
    }

    TEST_CASE("gradients accumulate over reused nodes") {
        Tape tape;
        Var x = tape.leaf(Tensor::scalar(1.5), true);
        tape.backward(sum(add(x, add(x, x))));
        CHECK(tape.grad(x).item() == 3.0);
    }
}

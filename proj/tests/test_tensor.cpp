#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "streamnas/adam.hpp"
#include "streamnas/checkpoint.hpp"
#include "streamnas/rng.hpp"
#include "streamnas/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace streamnas;
using testsupport::check_gradients;
using testsupport::random_tensor;

TEST_CASE("elementwise add") {
    Tensor a(Shape{2}, {1.0, 2.0});
    Tensor b(Shape{2}, {3.0, 4.0});
    Tensor c = add(a, b);
    CHECK(c.data() == std::vector<double>{4.0, 6.0});
}

TEST_CASE("shape mismatch names both shapes") {
    Tensor a(Shape{2}, {1.0, 2.0});
    Tensor b(Shape{3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2]") &&
                                     Catch::Matchers::ContainsSubstring("[3]"));
}

TEST_CASE("invalid softmax axis") {
    Tensor a(Shape{2, 3}, 1.0);
    CHECK_THROWS_AS(softmax(a, 0), AxisError);
}

TEST_CASE("conv1d valid length") {
    Tensor x(Shape{1, 8}, 1.0);
    Tensor w(Shape{1, 1, 3}, 1.0);
    Tensor b(Shape{1}, 0.0);
    Tensor y = conv1d(x, w, b, 1, 1, 0);
    CHECK(y.shape() == Shape{1, 6});
}

TEST_CASE("softmax of zeros is uniform") {
    Tensor x(Shape{3}, 0.0);
    Tensor y = softmax(x);
    for (double v : y.data()) CHECK(v == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("backward of x*x") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = mul(x, x);
    loss.backward();
    CHECK(x.grad()[0] == Catch::Approx(6.0));
}

TEST_CASE("relu subgradient is zero on the negative side") {
    Tensor x(Shape{2}, {-1.0, 2.0}, true);
    Tensor loss = sum_all(relu(x));
    loss.backward();
    CHECK(x.grad() == std::vector<double>{0.0, 1.0});
}

TEST_CASE("non-scalar loss is rejected") {
    Tensor x(Shape{2}, {1.0, 2.0}, true);
    Tensor y = relu(x);
    CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("repeated backward accumulates until zeroed") {
    Tensor x = Tensor::scalar(3.0, true);
    mul(x, x).backward();
    mul(x, x).backward();
    CHECK(x.grad()[0] == Catch::Approx(12.0));
    x.zero_grad();
    mul(x, x).backward();
    CHECK(x.grad()[0] == Catch::Approx(6.0));
}

TEST_CASE("shared subexpression gradients sum") {
    // loss = s + s with s shared must equal the explicitly duplicated graph.
    Tensor x(Shape{3}, {0.5, -0.2, 0.8}, true);
    Tensor s = sum_all(mul(x, x));
    Tensor shared_loss = add(s, s);
    shared_loss.backward();
    std::vector<double> shared_grad = x.grad();

    Tensor x2(Shape{3}, {0.5, -0.2, 0.8}, true);
    Tensor dup = add(sum_all(mul(x2, x2)), sum_all(mul(x2, x2)));
    dup.backward();
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(shared_grad[i] == Catch::Approx(x2.grad()[i]).epsilon(1e-14));
}

TEST_CASE("dropout in evaluation mode is the identity") {
    Rng rng(7);
    Tensor x(Shape{4}, {1.0, -2.0, 3.0, 0.5});
    Tensor y = dropout(x, 0.5, rng, /*training=*/false);
    CHECK(y.impl() == x.impl());
}

TEST_CASE("dropout training scales kept activations by 1/(1-p)") {
    Rng rng(7);
    Tensor x(Shape{1000}, 1.0);
    Tensor y = dropout(x, 0.25, rng, true);
    int kept = 0;
    for (double v : y.data()) {
        if (v != 0.0) {
            CHECK(v == Catch::Approx(1.0 / 0.75));
            ++kept;
        }
    }
    CHECK(kept > 650);
    CHECK(kept < 850);
}

TEST_CASE("gradients match central finite differences per operator", "[gradcheck]") {
    Rng rng(20240817);
    const int cases_per_op = 100;

    SECTION("add/sub/mul/min broadcast forms") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(1, c);
            Tensor a = random_tensor(Shape{3, 4}, local);
            Tensor b;
            switch (c % 4) {
                case 0: b = random_tensor(Shape{3, 4}, local); break;
                case 1: b = random_tensor(Shape{4}, local); break;
                case 2: b = random_tensor(Shape{3, 1}, local); break;
                default: b = random_tensor(Shape{1}, local); break;
            }
            auto res = check_gradients({a, b}, [&] {
                Tensor s = add(a, b);
                Tensor d = sub(s, b);
                Tensor m = mul(d, b);
                Tensor mn = minimum(m, b);
                return mean_all(mn);
            });
            INFO("case " << c);
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("matmul") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(2, c);
            Tensor a = random_tensor(Shape{2, 3}, local);
            Tensor b = random_tensor(Shape{3, 4}, local);
            auto res = check_gradients({a, b}, [&] { return mean_all(matmul(a, b)); });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("unary ops") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(3, c);
            Tensor a = random_tensor(Shape{6}, local, 0.1, 2.0);  // positive domain for log
            auto res = check_gradients({a}, [&] {
                Tensor t = tanh_op(a);
                Tensor s = sigmoid(t);
                Tensor l = log_op(add_scalar(s, 1.0));
                Tensor e = exp_op(scale(l, 0.5));
                return mean_all(e);
            });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("relu away from the kink") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(4, c);
            Tensor a = random_tensor(Shape{8}, local);
            for (double& v : a.data())
                if (std::abs(v) < 1e-3) v = 0.1;  // keep clear of the nondifferentiable point
            auto res = check_gradients({a}, [&] { return mean_all(relu(a)); });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("softmax") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(5, c);
            Tensor a = random_tensor(Shape{2, 5}, local, -2.0, 2.0);
            Tensor w = random_tensor(Shape{2, 5}, local);
            auto res = check_gradients({a}, [&] { return mean_all(mul(softmax(a), w)); });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("conv1d with stride, dilation, padding") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(6, c);
            const std::size_t stride = 1 + c % 2;
            const std::size_t dilation = 1 + (c / 2) % 2;
            const std::size_t padding = c % 3;
            Tensor x = random_tensor(Shape{2, 9}, local);
            Tensor w = random_tensor(Shape{3, 2, 3}, local);
            Tensor b = random_tensor(Shape{3}, local);
            auto res = check_gradients(
                {x, w, b}, [&] { return mean_all(conv1d(x, w, b, stride, dilation, padding)); });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("pooling") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(7, c);
            Tensor x = random_tensor(Shape{2, 8}, local);
            auto res = check_gradients({x}, [&] {
                Tensor a = mean_pool1d(x, 3, 1, 1);
                Tensor m = max_pool1d(x, 3, 2, 0);
                return add(mean_all(a), mean_all(m));
            });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("global and adaptive pooling") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(8, c);
            Tensor x = random_tensor(Shape{3, 7}, local);
            Tensor v = random_tensor(Shape{5}, local);
            auto res = check_gradients({x, v}, [&] {
                Tensor g = global_mean_pool(x);
                Tensor down = adaptive_mean_1d(g, 2);
                Tensor up = adaptive_mean_1d(v, 11);
                return add(mean_all(down), mean_all(up));
            });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("concat, slice, gather, scatter") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(9, c);
            Tensor a = random_tensor(Shape{2, 3}, local);
            Tensor b = random_tensor(Shape{2, 2}, local);
            std::vector<std::size_t> gidx = {1, 0, 1};
            std::vector<std::size_t> sidx = {0, 1, 0};
            auto res = check_gradients({a, b}, [&] {
                Tensor cat = concat({a, b}, 1);
                Tensor sl = slice_cols(cat, 1, 3);
                Tensor ga = gather_rows(sl, gidx);
                Tensor sc = scatter_sum_rows(ga, sidx, 2);
                return mean_all(sc);
            });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("scatter_max away from ties") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(10, c);
            Tensor a = random_tensor(Shape{4, 3}, local);
            std::vector<std::size_t> idx = {0, 1, 0, 1};
            auto res = check_gradients({a}, [&] { return mean_all(scatter_max_rows(a, idx, 2)); });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("clip away from the boundaries") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(11, c);
            Tensor a = random_tensor(Shape{6}, local, -2.0, 2.0);
            for (double& v : a.data())
                if (std::abs(std::abs(v) - 1.0) < 1e-3) v *= 1.1;
            auto res = check_gradients({a}, [&] { return mean_all(clip(a, -1.0, 1.0)); });
            CHECK(res.max_rel_err < 1e-4);
        }
    }

    SECTION("dropout with a frozen mask") {
        for (int c = 0; c < cases_per_op; ++c) {
            Rng local = rng.split(12, c);
            Tensor a = random_tensor(Shape{10}, local);
            Rng mask_rng = local.split(99);
            Rng mask_rng_copy = mask_rng;
            bool first = true;
            auto res = check_gradients({a}, [&] {
                Rng r = first ? mask_rng : mask_rng_copy;  // same mask each call
                first = false;
                return mean_all(dropout(a, 0.3, r, true));
            });
            CHECK(res.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("embedding lookup routes gradients to selected rows") {
    Tensor table(Shape{3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}, true);
    Tensor out = embedding(table, {2, 0});
    CHECK(out.data() == std::vector<double>{5.0, 6.0, 1.0, 2.0});
    sum_all(out).backward();
    CHECK(table.grad() == std::vector<double>{1.0, 1.0, 0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("adam zero gradient leaves parameter unchanged") {
    Tensor p(Shape{2}, {1.0, -1.0}, true);
    AdamOptimizer opt({p}, 0.1);
    opt.zero_grad();
    opt.step();
    CHECK(p.data() == std::vector<double>{1.0, -1.0});
}

TEST_CASE("adam first step magnitude is about lr * sign(g)") {
    Tensor p(Shape{1}, {0.0}, true);
    AdamOptimizer opt({p}, 0.01);
    p.grad()[0] = 3.7;
    opt.step();
    // After bias correction m_hat = g, v_hat = g^2, so the update is lr*sign(g).
    CHECK(p.data()[0] == Catch::Approx(-0.01).margin(1e-6));
}

TEST_CASE("adam missing gradient buffer is a contract error") {
    Tensor p(Shape{2}, {1.0, -1.0});  // requires_grad false, no grad buffer
    AdamOptimizer opt({p}, 0.1);
    CHECK_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("same seed gives bitwise identical training trajectories") {
    auto run = [] {
        Rng rng(42);
        Tensor w(Shape{2, 2}, {0.1, 0.2, 0.3, 0.4}, true);
        AdamOptimizer opt({w}, 0.05);
        for (int step = 0; step < 20; ++step) {
            Tensor x = testsupport::random_tensor(Shape{1, 2}, rng);
            Tensor loss = mean_all(mul(matmul(x, w), matmul(x, w)));
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
        return w.data();
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoint round trip") {
    const std::string path = "test_ckpt_roundtrip.bin";
    checkpoint::NamedTensors tensors;
    tensors.emplace_back("layer0/weight", Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
    tensors.emplace_back("layer0/bias", Tensor(Shape{3}, {0.5, -0.5, 0.25}));
    checkpoint::save(path, tensors);
    auto loaded = checkpoint::load(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].first == "layer0/weight");
    CHECK(loaded[0].second.shape() == Shape{2, 3});
    CHECK(loaded[0].second.data() == tensors[0].second.data());
    CHECK(loaded[1].second.data() == tensors[1].second.data());
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects foreign files") {
    const std::string path = "test_ckpt_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(checkpoint::load(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("rng split streams are independent and deterministic") {
    Rng root(123);
    Rng a = root.split(1);
    Rng b = root.split(2);
    Rng a2 = Rng(123).split(1);
    CHECK(a.next_u64() == a2.next_u64());
    CHECK(a.next_u64() != b.next_u64());

    Rng u(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

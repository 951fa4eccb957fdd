#include "generators.hpp"

#include "ia/checkpoint.hpp"
#include "ia/gradcheck.hpp"
#include "ia/ops.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace ia;

TEST_SUITE("tensor") {
  TEST_CASE("shape and element access") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.at(1, 2) == 6);
    CHECK(t.slice(1).shape() == Shape{3});
    CHECK(t.slice(1)[0] == 4);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
    CHECK(t.reshaped({3, 2}).at(2, 1) == 6);
  }

  TEST_CASE("float specialisation shares the layout") {
    BasicTensor<float> t({2, 2}, {1.f, 2.f, 3.f, 4.f});
    CHECK(t.matrix().sum() == 10.f);
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("forward examples") {
    Tape t;
    const NodeId x = t.constant(Tensor({2}, {1, 2}));
    CHECK(forward(t) == Tensor({2}, {1, 2}));

    Tape t2;
    const NodeId a = t2.constant(Tensor({2}, {1, 2}));
    const NodeId b = t2.constant(Tensor({2}, {3, 4}));
    add(t2, a, b);
    CHECK(forward(t2) == Tensor({2}, {4, 6}));

    Tape t3;
    const NodeId p = t3.constant(Tensor({2}, {-1, 2}));
    const NodeId q = t3.constant(Tensor({2}, {3, 3}));
    relu(t3, mul(t3, p, q));
    CHECK(forward(t3) == Tensor({2}, {0, 6}));
    (void)x;
  }

  TEST_CASE("shape mismatch names the node") {
    Tape t;
    const NodeId a = t.constant(Tensor({2}, {1, 2}), "a");
    const NodeId b = t.constant(Tensor({3}, {1, 2, 3}), "b");
    try {
      add(t, a, b);
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("node 2") != std::string::npos);
    }
  }

  TEST_CASE("non-finite values are rejected") {
    Tape t;
    const NodeId a = t.constant(Tensor({1}, {1e300}));
    CHECK_THROWS_AS(mul(t, a, a), NonFiniteError);
  }

  TEST_CASE("backward_to examples") {
    Tape t;
    const NodeId x = t.parameter(Tensor({3}, {1, 2, 3}));
    const NodeId s = sum(t, x);
    CHECK(backward_to(t, s, x) == Tensor({3}, {1, 1, 1}));

    Tape t2;
    const NodeId y = t2.parameter(Tensor({2}, {1, 2}));
    const NodeId s2 = sum(t2, mul(t2, y, y));
    CHECK(backward_to(t2, s2, y) == Tensor({2}, {2, 4}));
  }

  TEST_CASE("relu-sum chain has zero gradient at the negative entry") {
    const Tensor x0({2, 2}, {1.5, -0.7, 0.3, 2.0});
    Tape t;
    const NodeId x = t.parameter(x0);
    const NodeId s = sum(t, relu(t, x));
    const Tensor g = backward_to(t, s, x);
    const double h = 1e-6;
    for (Index i = 0; i < 4; ++i) {
      Tensor p = x0, m = x0;
      p[i] += h;
      m[i] -= h;
      const double fd = (relu(p).vec().sum() - relu(m).vec().sum()) / (2 * h);
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-8));
    }
    CHECK(g[1] == 0.0);
  }

  TEST_CASE("backward_to rejects non-scalar sources and non-ancestors") {
    Tape t;
    const NodeId x = t.parameter(Tensor({2}, {1, 2}));
    const NodeId y = t.parameter(Tensor({2}, {3, 4}));
    const NodeId r = relu(t, x);
    const NodeId s = sum(t, r);
    CHECK_THROWS_AS(backward_to(t, r, x), TapeError);
    CHECK_THROWS_AS(backward_to(t, s, y), TapeError);
  }

  TEST_CASE("backward_params examples") {
    Tape t;
    const NodeId w = t.parameter(Tensor({2}, {0.1, -0.4}));
    const NodeId x = t.constant(Tensor({2}, {2, 3}));
    const NodeId p = t.parameter(Tensor({2}, {5, 5}));
    const NodeId loss = sum(t, mul(t, w, x));
    const auto g = backward_params(t, loss);
    CHECK(g.at(w) == Tensor({2}, {2, 3}));
    CHECK(g.at(p) == Tensor::zeros({2}));
    CHECK(t.node(w).grad.has_value());
    CHECK_THROWS_AS(backward_params(t, mul(t, w, x)), TapeError);
  }

  TEST_CASE("gradients accumulate across summed loss terms") {
    Tape t;
    const NodeId w = t.parameter(Tensor({2}, {1, -2}));
    const NodeId l1 = sum(t, mul(t, w, w));
    const NodeId l2 = sum(t, scale(t, w, 3.0));
    const auto g = backward_params(t, add(t, l1, l2));
    CHECK(g.at(w) == Tensor({2}, {2 + 3, -4 + 3}));
  }

  TEST_CASE("every op matches finite differences on random 3x4 inputs") {
    gen::Rng rng(7);
    std::vector<std::pair<const char*, GraphBuilder>> unary{
        {"relu", [](Tape& t, std::span<const NodeId> in) { return relu(t, in[0]); }},
        {"scale", [](Tape& t, std::span<const NodeId> in) { return scale(t, in[0], -1.5); }},
        {"mul", [](Tape& t, std::span<const NodeId> in) { return mul(t, in[0], in[0]); }},
        {"reshape", [](Tape& t, std::span<const NodeId> in) { return reshape(t, in[0], {4, 3}); }},
        {"softmax_xent",
         [](Tape& t, std::span<const NodeId> in) { return softmax_xent(t, in[0], {0, 3, 1}); }},
        {"gather",
         [](Tape& t, std::span<const NodeId> in) {
           return gather_label_scores(t, in[0], {2, 0, 1});
         }},
    };
    for (const auto& [name, build] : unary) {
      CAPTURE(name);
      Tensor x = gen::uniform({3, 4}, rng, 0.1, 1.0);
      for (Index i = 0; i < x.size(); ++i)
        if (i % 2) x[i] = -x[i];
      CHECK(gradient_error(build, {x}, rng) < 1e-6);
    }
  }
}

TEST_SUITE("autodiff-properties") {
  // Random small MLP-like graph: relu(linear(x)) -> linear -> sum.
  struct Graph {
    Tape tape;
    NodeId w1, b1, w2, b2, out;
  };

  Graph random_graph(gen::Rng& rng) {
    Graph g;
    const Index n = gen::integer(rng, 1, 4), d = gen::integer(rng, 1, 5), h = gen::integer(rng, 1, 5);
    const NodeId x = g.tape.constant(gen::uniform({n, d}, rng));
    g.w1 = g.tape.parameter(gen::uniform({d, h}, rng));
    g.b1 = g.tape.parameter(gen::uniform({h}, rng));
    g.w2 = g.tape.parameter(gen::uniform({h, 2}, rng));
    g.b2 = g.tape.parameter(gen::uniform({2}, rng));
    const NodeId hid = relu(g.tape, linear(g.tape, x, g.w1, g.b1));
    g.out = linear(g.tape, hid, g.w2, g.b2);
    return g;
  }

  TEST_CASE("forward replay is bit-identical") {
    gen::Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      Graph g = random_graph(rng);
      const Tensor first = g.tape.value(g.out);
      CHECK(forward(g.tape) == first);
      CHECK(forward(g.tape) == first);
    }
  }

  TEST_CASE("backward is linear in the loss") {
    gen::Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      Graph g = random_graph(rng);
      const double a = gen::real(rng, -2, 2), b = gen::real(rng, -2, 2);
      Tape& t = g.tape;
      const NodeId r1 = t.constant(gen::uniform(t.value(g.out).shape(), rng));
      const NodeId r2 = t.constant(gen::uniform(t.value(g.out).shape(), rng));
      const NodeId f = sum(t, mul(t, g.out, r1));
      const NodeId h = sum(t, mul(t, g.out, r2));
      const NodeId combo = add(t, scale(t, f, a), scale(t, h, b));
      const auto gf = backward_params(t, f);
      const auto gh = backward_params(t, h);
      const auto gc = backward_params(t, combo);
      for (NodeId p : {g.w1, g.b1, g.w2, g.b2}) {
        Tensor expect(gf.at(p).shape());
        expect.vec() = a * gf.at(p).vec() + b * gh.at(p).vec();
        CHECK(max_abs_diff(gc.at(p), expect) < 1e-12);
      }
    }
  }

  TEST_CASE("probe backward does not interfere with parameter gradients") {
    gen::Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      Graph g = random_graph(rng);
      Tape& t = g.tape;
      const NodeId probe = sum(t, g.out);
      const NodeId loss = sum(t, mul(t, g.out, g.out));
      Tape copy = t;
      const auto before = backward_params(copy, loss);
      const Tensor w1 = t.value(g.w1);
      backward_to(t, probe, g.w1);
      CHECK(t.value(g.w1) == w1);
      CHECK_FALSE(t.node(g.w1).grad.has_value());
      const auto after = backward_params(t, loss);
      for (NodeId p : {g.w1, g.b1, g.w2, g.b2}) CHECK(after.at(p) == before.at(p));
    }
  }
}

TEST_SUITE("reforward") {
  TEST_CASE("identity replacement leaves downstream values unchanged") {
    gen::Rng rng(21);
    Tape t;
    const NodeId x = t.parameter(gen::uniform({2, 3}, rng));
    const NodeId w = t.parameter(gen::uniform({3, 2}, rng));
    const NodeId b = t.parameter(gen::uniform({2}, rng));
    const NodeId f = relu(t, x);
    const NodeId y = linear(t, f, w, b);
    const Tape r = reforward_from(t, f, t.value(f));
    CHECK(r.value(y) == t.value(y));
  }

  TEST_CASE("zero replacement through a pure-linear head gives zeros") {
    gen::Rng rng(22);
    Tape t;
    const NodeId x = t.parameter(gen::uniform({2, 3}, rng));
    const NodeId f = relu(t, x);
    const NodeId y = scale(t, reshape(t, f, {6}), 3.0);
    const Tape r = reforward_from(t, f, Tensor::zeros({2, 3}));
    CHECK(r.value(y) == Tensor::zeros({6}));
    CHECK_THROWS_AS(reforward_from(t, f, Tensor::zeros({3, 2})), ShapeError);
  }

  TEST_CASE("masked replacement equals an independent forward of masked features") {
    gen::Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x0 = gen::uniform({2, 4}, rng);
      const Tensor w0 = gen::uniform({4, 3}, rng), b0 = gen::uniform({3}, rng);
      const Tensor mask = gen::binary({2, 4}, rng);
      Tape t;
      const NodeId x = t.parameter(x0);
      const NodeId f = relu(t, x);
      const NodeId y = linear(t, f, t.parameter(w0), t.parameter(b0));
      Tensor masked = t.value(f);
      masked.vec().array() *= mask.vec().array();
      Tape r = reforward_from(t, f, masked);
      CHECK(r.value(y) == linear(masked, w0, b0));
      // Gradient stops at the pinned node.
      const auto g = backward_params(r, sum(r, r.nodes().back().id));
      CHECK(g.at(x) == Tensor::zeros({2, 4}));
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("bit-exact round trip") {
    gen::Rng rng(31);
    TensorDict d;
    d["conv0.weight"] = gen::uniform({2, 3, 3, 3}, rng, -1e10, 1e10);
    d["fc0.bias"] = Tensor({3}, {0.1, -0.0, 5e-324});
    d["tiny"] = Tensor({1}, {std::numeric_limits<double>::denorm_min()});
    const auto base = std::filesystem::temp_directory_path() / "ia_ckpt_roundtrip";
    save_checkpoint(base, d);
    const TensorDict back = load_checkpoint(base);
    REQUIRE(back.size() == d.size());
    for (const auto& [name, t] : d) {
      const Tensor& u = back.at(name);
      CHECK(u.shape() == t.shape());
      CHECK(std::memcmp(u.data(), t.data(), sizeof(double) * t.size()) == 0);
    }
    std::ifstream idx(index_path(base));
    std::string first;
    std::getline(idx, first);
    CHECK(first == "conv0.weight f64 2 3 3 3 0");
  }

  TEST_CASE("malformed index line is reported with its line number") {
    const auto base = std::filesystem::temp_directory_path() / "ia_ckpt_bad";
    save_checkpoint(base, {{"a", Tensor({2}, {1, 2})}, {"b", Tensor({1}, {3})}});
    {
      std::ofstream os(index_path(base), std::ios::app);
      os << "c f32 1 24\n";
    }
    try {
      load_checkpoint(base);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
}

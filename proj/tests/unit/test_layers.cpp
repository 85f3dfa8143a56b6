#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "gptgnn/errors.hpp"
#include "gptgnn/layers.hpp"

using namespace gptgnn;

namespace {

TypeRegistry one_type(int dim) {
  TypeRegistry types;
  const auto t = types.add_node_type("node", dim);
  types.add_edge_type("link", t, t, true);
  return types;
}

MessageGraph slots_of_type(int n, std::vector<MessageEdge> edges) {
  MessageGraph mg;
  mg.num_slots = n;
  mg.slot_type.assign(n, 0);
  mg.edges = std::move(edges);
  return mg;
}

std::vector<TypedInput> one_input(Tape& t, const Tensor& x) {
  Index slots(x.rows());
  std::iota(slots.begin(), slots.end(), 0);
  return {TypedInput{0, t.constant(x), slots}};
}

Tensor run(const GnnEncoder& enc, ParameterStore& params, const MessageGraph& mg, const Tensor& x) {
  Tape t;
  const auto in = one_input(t, x);
  return t.value(enc.encode(t, params, mg, in));
}

LayerConfig config(LayerKind kind, int hidden, int heads, int layers) {
  LayerConfig c;
  c.kind = kind;
  c.hidden_dim = hidden;
  c.num_heads = heads;
  c.num_layers = layers;
  c.dropout = 0.0f;
  return c;
}

// Symmetric random edges as message pairs.
std::vector<MessageEdge> random_edges(Rng& rng, int n, double p) {
  std::vector<MessageEdge> e;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(p)) {
        e.push_back({i, j, 0});
        e.push_back({j, i, 0});
      }
  return e;
}

std::vector<double> row_times(std::span<const float> x, const Tensor& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (int c = 0; c < w.cols(); ++c)
    for (int k = 0; k < w.rows(); ++k) out[c] += static_cast<double>(x[k]) * w(k, c);
  return out;
}

}  // namespace

TEST_CASE("layer config validation") {
  CHECK_THROWS_AS(config(LayerKind::Mean, 6, 4, 1).validate(), ConfigError);
  CHECK_THROWS_AS(config(LayerKind::Mean, 8, 2, 0).validate(), ConfigError);
  LayerConfig bad = config(LayerKind::Mean, 8, 2, 1);
  bad.dropout = 1.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(config(LayerKind::TypedAttention, 8, 2, 3).validate());
}

TEST_CASE("a lone node with identity maps gives tanh of its projection") {
  for (auto kind : {LayerKind::Mean, LayerKind::TypedAttention}) {
    const TypeRegistry types = one_type(4);
    GnnEncoder enc(config(kind, 4, 2, 1), types);
    ParameterStore params;
    enc.init_identity(params);
    const Tensor x = Tensor::matrix(1, 4, {0.3f, -1.2f, 0.0f, 2.0f});
    const Tensor h = run(enc, params, slots_of_type(1, {}), x);
    for (int c = 0; c < 4; ++c) CHECK(h(0, c) == doctest::Approx(std::tanh(x(0, c))).epsilon(1e-6));
  }
}

TEST_CASE("isomorphic nodes with equal inputs get equal outputs") {
  // 0 and 1 both hang off 2, which also links to 3.
  for (auto kind : {LayerKind::Mean, LayerKind::TypedAttention}) {
    const TypeRegistry types = one_type(3);
    GnnEncoder enc(config(kind, 8, 2, 2), types);
    ParameterStore params;
    Rng rng(5);
    enc.init_params(params, rng);
    Tensor x = fixtures::random_matrix(rng, 4, 3);
    for (int c = 0; c < 3; ++c) x(1, c) = x(0, c);
    const auto mg = slots_of_type(4, {{0, 2, 0}, {2, 0, 0}, {1, 2, 0}, {2, 1, 0}, {2, 3, 0}, {3, 2, 0}});
    const Tensor h = run(enc, params, mg, x);
    for (int c = 0; c < 8; ++c) CHECK(h(0, c) == h(1, c));
  }
}

TEST_CASE("mean layer on a star matches a hand-rolled aggregation") {
  const TypeRegistry types = one_type(3);
  GnnEncoder enc(config(LayerKind::Mean, 6, 2, 1), types);
  ParameterStore params;
  Rng rng(7);
  enc.init_params(params, rng);
  const Tensor x = fixtures::random_matrix(rng, 5, 3);
  std::vector<MessageEdge> e;
  for (int leaf = 1; leaf < 5; ++leaf) {
    e.push_back({leaf, 0, 0});
    e.push_back({0, leaf, 0});
  }
  const Tensor h = run(enc, params, slots_of_type(5, e), x);

  const Tensor& w_in = params.get("gnn.in.0.W").value;
  const Tensor& b_in = params.get("gnn.in.0.b").value;
  std::vector<std::vector<double>> proj(5);
  for (int i = 0; i < 5; ++i) {
    proj[i] = row_times(x.row(i), w_in);
    for (int c = 0; c < 6; ++c) proj[i][c] += b_in(0, c);
  }
  auto as_float = [](const std::vector<double>& v) {
    std::vector<float> f(v.begin(), v.end());
    return f;
  };
  const Tensor& w_link = params.get("gnn.l0.e0.W").value;
  const Tensor& w_self = params.get("gnn.l0.e" + std::to_string(enc.self_edge_type()) + ".W").value;
  std::vector<double> agg(6, 0.0);
  for (int leaf = 1; leaf < 5; ++leaf) {
    const auto m = row_times(as_float(proj[leaf]), w_link);
    for (int c = 0; c < 6; ++c) agg[c] += m[c];
  }
  const auto self = row_times(as_float(proj[0]), w_self);
  for (int c = 0; c < 6; ++c) {
    const double mean = (agg[c] + self[c]) / 5.0;
    CHECK(h(0, c) == doctest::Approx(std::tanh(0.5 * (mean + proj[0][c]))).epsilon(1e-5));
  }
}

TEST_CASE("attention weights") {
  const TypeRegistry types = one_type(3);
  GnnEncoder enc(config(LayerKind::TypedAttention, 8, 2, 1), types);
  ParameterStore params;
  Rng rng(11);
  enc.init_params(params, rng);

  SUBCASE("a single in-edge gets weight one") {
    Tape t;
    const Tensor x = fixtures::random_matrix(rng, 1, 3);
    const auto in = one_input(t, x);
    const auto [edges, w] = enc.attention_weights(params, slots_of_type(1, {}), in, t, 0);
    REQUIRE(edges.size() == 1);
    CHECK(w(0, 0) == 1.0f);
    CHECK(w(0, 1) == 1.0f);
  }

  SUBCASE("identical in-edges get equal weights") {
    Tape t;
    Tensor x = fixtures::random_matrix(rng, 3, 3);
    for (int c = 0; c < 3; ++c) x(2, c) = x(1, c);
    const auto in = one_input(t, x);
    const auto [edges, w] = enc.attention_weights(params, slots_of_type(3, {{1, 0, 0}, {2, 0, 0}}), in, t, 0);
    int a = -1, b = -1;
    for (std::size_t k = 0; k < edges.size(); ++k) {
      if (edges[k].src == 1) a = static_cast<int>(k);
      if (edges[k].src == 2) b = static_cast<int>(k);
    }
    REQUIRE(a >= 0);
    REQUIRE(b >= 0);
    for (int hd = 0; hd < 2; ++hd) CHECK(w(a, hd) == w(b, hd));
  }

  SUBCASE("four in-edges match a softmax of recomputed scores") {
    Tape t;
    const Tensor x = fixtures::random_matrix(rng, 5, 3);
    const auto in = one_input(t, x);
    const auto mg = slots_of_type(5, {{1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}});
    const auto [edges, w] = enc.attention_weights(params, mg, in, t, 0);
    REQUIRE(edges.size() == 5);

    const Tensor& w_in = params.get("gnn.in.0.W").value;
    const Tensor& b_in = params.get("gnn.in.0.b").value;
    auto proj = [&](int i) {
      auto p = row_times(x.row(i), w_in);
      std::vector<float> f(8);
      for (int c = 0; c < 8; ++c) f[c] = static_cast<float>(p[c] + b_in(0, c));
      return f;
    };
    for (int hd = 0; hd < 2; ++hd) {
      std::vector<double> s;
      for (const auto& e : edges) {
        const std::string base = "gnn.l0.e" + std::to_string(e.type);
        const auto q = row_times(proj(e.dst), params.get(base + ".Q").value);
        const auto k = row_times(proj(e.src), params.get(base + ".K").value);
        double dot = 0.0;
        for (int c = hd * 4; c < hd * 4 + 4; ++c) dot += q[c] * k[c];
        s.push_back(dot / 2.0);
      }
      double z = 0.0;
      for (double v : s) z += std::exp(v);
      double total = 0.0;
      for (std::size_t k = 0; k < s.size(); ++k) {
        CHECK(w(static_cast<int>(k), hd) == doctest::Approx(std::exp(s[k]) / z).epsilon(1e-5));
        CHECK(w(static_cast<int>(k), hd) >= 0.0f);
        total += w(static_cast<int>(k), hd);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  SUBCASE("mean encoders have no attention") {
    GnnEncoder mean(config(LayerKind::Mean, 8, 2, 1), types);
    ParameterStore p2;
    mean.init_params(p2, rng);
    Tape t;
    const auto in = one_input(t, fixtures::random_matrix(rng, 1, 3));
    CHECK_THROWS_AS(mean.attention_weights(p2, slots_of_type(1, {}), in, t, 0), NotAttentionLayer);
  }
}

TEST_CASE("relabeling slots permutes the outputs") {
  Rng rng(13);
  for (auto kind : {LayerKind::Mean, LayerKind::TypedAttention})
    for (int trial = 0; trial < 5; ++trial) {
      const TypeRegistry types = one_type(3);
      GnnEncoder enc(config(kind, 8, 2, 2), types);
      ParameterStore params;
      enc.init_params(params, rng);
      const int n = 12;
      const Tensor x = fixtures::random_matrix(rng, n, 3);
      const auto edges = random_edges(rng, n, 0.3);
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);

      Tensor px = Tensor::matrix(n, 3);
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) px(perm[i], c) = x(i, c);
      std::vector<MessageEdge> pe;
      for (const auto& e : edges) pe.push_back({perm[e.src], perm[e.dst], e.type});

      const Tensor h = run(enc, params, slots_of_type(n, edges), x);
      const Tensor ph = run(enc, params, slots_of_type(n, pe), px);
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < 8; ++c) CHECK(ph(perm[i], c) == doctest::Approx(h(i, c)).epsilon(1e-5));
    }
}

TEST_CASE("outputs depend only on the L-hop in-neighborhood") {
  Rng rng(17);
  for (auto kind : {LayerKind::Mean, LayerKind::TypedAttention})
    for (int trial = 0; trial < 5; ++trial) {
      const TypeRegistry types = one_type(3);
      GnnEncoder enc(config(kind, 8, 2, 2), types);
      ParameterStore params;
      enc.init_params(params, rng);
      const int n = 20;
      const Tensor x = fixtures::random_matrix(rng, n, 3);
      const auto edges = random_edges(rng, n, 0.08);
      const auto mg = slots_of_type(n, edges);
      const int target = static_cast<int>(rng.below(n));

      std::set<int> ball{target};
      for (int hop = 0; hop < 2; ++hop) {
        std::set<int> next = ball;
        for (const auto& e : edges)
          if (ball.contains(e.dst)) next.insert(e.src);
        ball = next;
      }
      const Tensor h = run(enc, params, mg, x);
      for (int outside = 0; outside < n; ++outside) {
        if (ball.contains(outside)) continue;
        Tensor edited = x;
        for (int c = 0; c < 3; ++c) edited(outside, c) += 5.0f;
        const Tensor he = run(enc, params, mg, edited);
        for (int c = 0; c < 8; ++c) CHECK(he(target, c) == h(target, c));
      }
    }
}

TEST_CASE("messages flow only along the given direction") {
  const TypeRegistry types = one_type(3);
  for (auto kind : {LayerKind::Mean, LayerKind::TypedAttention}) {
    GnnEncoder enc(config(kind, 8, 2, 3), types);
    ParameterStore params;
    Rng rng(19);
    enc.init_params(params, rng);
    const Tensor x = fixtures::random_matrix(rng, 3, 3);
    // 0 -> 1 -> 2; the reverse edges are absent.
    const auto mg = slots_of_type(3, {{0, 1, 0}, {1, 2, 0}});
    const Tensor h = run(enc, params, mg, x);
    Tensor edited = x;
    for (int c = 0; c < 3; ++c) edited(2, c) -= 3.0f;
    const Tensor he = run(enc, params, mg, edited);
    for (int c = 0; c < 8; ++c) {
      CHECK(he(0, c) == h(0, c));
      CHECK(he(1, c) == h(1, c));
    }
    Tensor upstream = x;
    for (int c = 0; c < 3; ++c) upstream(0, c) -= 3.0f;
    const Tensor hu = run(enc, params, mg, upstream);
    bool changed = false;
    for (int c = 0; c < 8; ++c) changed |= hu(2, c) != h(2, c);
    CHECK(changed);
  }
}

TEST_CASE("encoder errors") {
  const TypeRegistry types = one_type(3);
  GnnEncoder enc(config(LayerKind::Mean, 8, 2, 1), types);
  ParameterStore params;
  Rng rng(23);
  enc.init_params(params, rng);
  const auto mg = slots_of_type(2, {{0, 1, 0}});

  Tape t;
  const auto in = one_input(t, fixtures::random_matrix(rng, 2, 3));
  EncodeOptions no_self;
  no_self.self_messages = false;
  CHECK_THROWS_AS(enc.encode(t, params, mg, in, no_self), EmptyNeighborhood);

  Tape t2;
  const auto wide = one_input(t2, fixtures::random_matrix(rng, 2, 4));
  CHECK_THROWS_AS(enc.encode(t2, params, mg, wide), ShapeError);

  Tape t3;
  const auto short_in = one_input(t3, fixtures::random_matrix(rng, 1, 3));
  CHECK_THROWS_AS(enc.encode(t3, params, mg, short_in), ShapeError);
}

TEST_CASE("dropout is active only in training mode") {
  const TypeRegistry types = one_type(3);
  LayerConfig c = config(LayerKind::TypedAttention, 8, 2, 2);
  c.dropout = 0.5f;
  GnnEncoder enc(c, types);
  ParameterStore params;
  Rng rng(29);
  enc.init_params(params, rng);
  const Tensor x = fixtures::random_matrix(rng, 6, 3);
  const auto mg = slots_of_type(6, random_edges(rng, 6, 0.6));

  const Tensor eval1 = run(enc, params, mg, x);
  const Tensor eval2 = run(enc, params, mg, x);
  CHECK(eval1 == eval2);

  Tape t;
  const auto in = one_input(t, x);
  Rng drop(3);
  EncodeOptions train;
  train.training = true;
  train.dropout_rng = &drop;
  CHECK(t.value(enc.encode(t, params, mg, in, train)) != eval1);

  EncodeOptions no_rng;
  no_rng.training = true;
  CHECK_THROWS_AS(enc.encode(t, params, mg, in, no_rng), Error);
}

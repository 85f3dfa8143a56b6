#include "gptgnn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "gptgnn/errors.hpp"

namespace gptgnn {

std::string to_string(FieldMode m) { return m == FieldMode::Block ? "block" : "node"; }

FieldMode parse_field_mode(const std::string& s) {
  if (s == "block") return FieldMode::Block;
  if (s == "node") return FieldMode::Node;
  throw ConfigError("field_mode", "expected 'block' or 'node', got '" + s + "'");
}

void SbmAttrConfig::validate() const {
  if (num_blocks <= 0) throw ConfigError("num_blocks", "must be positive");
  if (nodes_per_block <= 0) throw ConfigError("nodes_per_block", "must be positive");
  if (!(p_out >= 0.0 && p_out <= p_in && p_in <= 1.0))
    throw ConfigError("p_in", "need 0 <= p_out <= p_in <= 1");
  if (attr_dim <= 0) throw ConfigError("attr_dim", "must be positive");
  if (!(attr_signal >= 0.0 && attr_signal <= 1.0)) throw ConfigError("attr_signal", "must be in [0, 1]");
  if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale", "must be nonnegative");
  if (num_epochs <= 0) throw ConfigError("num_epochs", "must be positive");
  if (num_fields <= 0) throw ConfigError("num_fields", "must be positive");
  if (authors_per_block < 0) throw ConfigError("authors_per_block", "must be nonnegative");
  if (author_dim <= 0) throw ConfigError("author_dim", "must be positive");
  if (!(p_write_out >= 0.0 && p_write_out <= p_write_in && p_write_in <= 1.0))
    throw ConfigError("p_write_in", "need 0 <= p_write_out <= p_write_in <= 1");
}

namespace {

std::vector<float> unit(std::vector<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (float& x : v) x = static_cast<float>(x * inv);
  }
  return v;
}

std::vector<std::vector<float>> centroids(int k, int dim, Rng& rng) {
  std::vector<std::vector<float>> out(k, std::vector<float>(dim));
  for (auto& c : out) {
    for (float& x : c) x = static_cast<float>(rng.normal());
    c = unit(std::move(c));
  }
  return out;
}

std::vector<float> mix(const std::vector<float>& centroid, double signal, double noise_scale, Rng& rng) {
  const int d = static_cast<int>(centroid.size());
  const double sd = noise_scale / std::sqrt(static_cast<double>(d));
  std::vector<float> x(d);
  for (int k = 0; k < d; ++k) x[k] = static_cast<float>(signal * centroid[k] + (1.0 - signal) * sd * rng.normal());
  return unit(std::move(x));
}

}  // namespace

AttributedGraph generate(const SbmAttrConfig& cfg) {
  cfg.validate();
  TypeRegistry types;
  const NodeTypeId paper = types.add_node_type("paper", cfg.attr_dim);
  const EdgeTypeId cites = types.add_edge_type("cites", paper, paper, true);
  NodeTypeId author = -1;
  EdgeTypeId writes = -1;
  if (cfg.authors_per_block > 0) {
    author = types.add_node_type("author", cfg.author_dim);
    writes = types.add_edge_type("writes", author, paper, false);
  }
  GraphBuilder b(types);

  Rng rng_attr = Rng::stream(cfg.seed, "datagen-attr");
  Rng rng_meta = Rng::stream(cfg.seed, "datagen-meta");
  Rng rng_edge = Rng::stream(cfg.seed, "datagen-edge");
  const auto paper_centroids = centroids(cfg.num_blocks, cfg.attr_dim, rng_attr);

  const int np = cfg.num_blocks * cfg.nodes_per_block;
  std::vector<NodeRef> papers(np);
  for (int i = 0; i < np; ++i) {
    const int block = i / cfg.nodes_per_block;
    NodeMeta m;
    m.class_label = block;
    m.time = static_cast<int>(rng_meta.below(cfg.num_epochs));
    m.field = cfg.field_mode == FieldMode::Block ? block % cfg.num_fields
                                                 : static_cast<int>(rng_meta.below(cfg.num_fields));
    papers[i] = b.add_node(paper, mix(paper_centroids[block], cfg.attr_signal, cfg.noise_scale, rng_attr), m);
  }
  for (int i = 0; i < np; ++i)
    for (int j = i + 1; j < np; ++j) {
      const bool same = i / cfg.nodes_per_block == j / cfg.nodes_per_block;
      if (rng_edge.bernoulli(same ? cfg.p_in : cfg.p_out)) b.add_edge(papers[i], papers[j], cites);
    }

  if (author >= 0) {
    const auto author_centroids = centroids(cfg.num_blocks, cfg.author_dim, rng_attr);
    const int na = cfg.num_blocks * cfg.authors_per_block;
    for (int a = 0; a < na; ++a) {
      const int block = a / cfg.authors_per_block;
      NodeMeta m;
      m.class_label = block;
      const NodeRef ar = b.add_node(author, mix(author_centroids[block], cfg.attr_signal, cfg.noise_scale, rng_attr), m);
      for (int i = 0; i < np; ++i) {
        const bool same = i / cfg.nodes_per_block == block;
        if (rng_edge.bernoulli(same ? cfg.p_write_in : cfg.p_write_out)) b.add_edge(ar, papers[i], writes);
      }
    }
  }
  return std::move(b).build();
}

double modularity(const AttributedGraph& g, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != g.num_nodes()) throw ShapeError("one label per node required");
  // Stored edges come in mirrored pairs; counting all of them and halving
  // gives the undirected totals.
  std::map<int, double> inside, degree;
  double m2 = 0.0;
  for (const auto& e : g.edges()) {
    m2 += 1.0;
    degree[labels[e.dst]] += 1.0;
    if (labels[e.src] == labels[e.dst]) inside[labels[e.dst]] += 1.0;
  }
  if (m2 == 0.0) return 0.0;
  double q = 0.0;
  for (const auto& [c, d] : degree) {
    const double in = inside.count(c) ? inside.at(c) : 0.0;
    q += in / m2 - (d / m2) * (d / m2);
  }
  return q;
}

double probe_accuracy(const std::vector<std::vector<float>>& x, std::span<const int> labels, Rng& rng) {
  if (x.size() != labels.size()) throw ShapeError("one label per row required");
  if (x.size() < 2) throw EmptyEval("probe needs at least two rows");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t half = order.size() / 2;
  const std::size_t d = x.front().size();

  std::map<int, std::vector<double>> sum;
  std::map<int, int> count;
  for (std::size_t k = 0; k < half; ++k) {
    const auto r = order[k];
    auto& s = sum[labels[r]];
    s.resize(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) s[j] += x[r][j];
    ++count[labels[r]];
  }
  int correct = 0;
  for (std::size_t k = half; k < order.size(); ++k) {
    const auto r = order[k];
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& [c, s] : sum) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x[r][j] - s[j] / count[c];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    correct += best == labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(order.size() - half);
}

}  // namespace gptgnn

#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <tuple>

#include "CLI11.hpp"
#include "gptgnn/errors.hpp"
#include "gptgnn/experiment.hpp"
#include "gptgnn/optim.hpp"
#include "json.hpp"

namespace gptgnn::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot write " + p.string());
  return os;
}

// Comment lines for text outputs: version, hash, then the full config.
std::vector<std::string> comment_header(const RunConfig& c) {
  std::vector<std::string> out{std::string("gptgnn ") + code_version(), "config_hash " + config_hash(c)};
  for (const auto& [k, v] : config_entries(c)) out.push_back(k + " = " + v);
  return out;
}

json header_json(const RunConfig& c) {
  json cfg = json::object();
  for (const auto& [k, v] : config_entries(c)) cfg[k] = v;
  return json{{"header", json{{"config", cfg}, {"config_hash", config_hash(c)}, {"version", code_version()}}}};
}

void write_csv_header(std::ostream& os, const RunConfig& c) {
  for (const auto& line : comment_header(c)) os << "# " << line << '\n';
}

AttributedGraph load(const RunConfig& c) {
  if (!fs::is_directory(c.graph_dir))
    throw DataError("graph directory '" + c.graph_dir + "' not found; run generate first");
  return load_graph(GraphFileBundle::in_directory(c.graph_dir));
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

json result_row(const RunConfig& c, const RunResult& r, bool with_variant) {
  json row = json::object();
  if (with_variant) row["variant"] = r.variant;
  row["task"] = to_string(c.task);
  row["transfer"] = to_string(c.split.kind);
  row["init"] = r.pretrained ? "pretrained" : "random";
  row["label_frac"] = r.label_fraction;
  row["seed"] = r.seed_index;
  row["metric"] = r.metric;
  row["value"] = r.value;
  row["best_epoch"] = r.best_epoch;
  return row;
}

// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& c, std::ostream& out) {
  const AttributedGraph g = make_graph(c);
  fs::create_directories(c.graph_dir);
  save_graph(g, GraphFileBundle::in_directory(c.graph_dir), comment_header(c));
  out << "generate: " << g.num_nodes() << " nodes, " << g.num_edges() << " stored edges -> " << c.graph_dir << '\n';
  return 0;
}

int cmd_pretrain(const RunConfig& c, std::ostream& out) {
  const AttributedGraph g = load(c);
  const std::uint64_t seed = run_seed(c, 0);
  const TransferSplit split = make_split(g, c.split, seed);
  const InducedSubgraph region = induced_subgraph(g, std::span<const NodeIndex>(split.pretrain_nodes));
  Pretrainer trainer(region.graph, c.pretrain, Rng::derive_seed(seed, "pretrain"));

  auto log = open_out(c.pretrain_log);
  log << header_json(c).dump() << '\n';
  trainer.run([&](const EpochStats& s) {
    json row{{"epoch", s.epoch},          {"loss_attr", s.loss_attr}, {"loss_edge", s.loss_edge},
             {"loss_total", s.loss_total}, {"val_loss", s.val_loss},   {"lr", s.lr},
             {"queue_fill", s.queue_fill}};
    log << row.dump() << '\n';
    out << "pretrain: epoch " << s.epoch << " loss " << fmt(s.loss_total) << " val " << fmt(s.val_loss) << '\n';
  });
  if (!log) throw DataError("cannot write " + c.pretrain_log);
  save_checkpoint(trainer.params(), c.checkpoint, comment_header(c));
  out << "pretrain: " << region.graph.num_nodes() << " nodes, checkpoint -> " << c.checkpoint << '\n';
  return 0;
}

int cmd_finetune(const RunConfig& c, std::ostream& out) {
  const AttributedGraph g = load(c);
  std::optional<ParameterStore> pretrained;
  if (c.init == "pretrained") {
    pretrained.emplace();
    for (auto& [name, value] : read_checkpoint(c.checkpoint)) {
      const bool moment = name.ends_with(".m1") || name.ends_with(".m2");
      if (!moment) pretrained->add(name, std::move(value));
    }
  }
  VariantSpec v;
  v.name = c.init;
  v.pretrain = pretrained.has_value();

  auto os = open_out(c.results);
  os << header_json(c).dump() << '\n';
  std::vector<double> values;
  for (int k = 0; k < c.num_seeds; ++k) {
    const TransferSplit split = make_split(g, c.split, run_seed(c, k));
    const RunResult r = finetune_variant(g, split, c, v, pretrained ? &*pretrained : nullptr, k);
    os << result_row(c, r, false).dump() << '\n';
    values.push_back(r.value);
    out << "finetune: seed " << k << ' ' << r.metric << ' ' << fmt(r.value) << '\n';
  }
  if (!os) throw DataError("cannot write " + c.results);
  out << "finetune: mean " << fmt(mean_of(values)) << " std " << fmt(std_of(values)) << " -> " << c.results << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  std::istringstream in(read_file(c.results));
  using Key = std::tuple<std::string, std::string, std::string, std::string, double, std::string>;
  std::map<Key, std::vector<double>> groups;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(c.results, line_no, e.what());
    }
    if (row.contains("header")) continue;
    try {
      const Key key{row.value("variant", std::string()), row.at("task").get<std::string>(),
                    row.at("transfer").get<std::string>(), row.at("init").get<std::string>(),
                    row.at("label_frac").get<double>(), row.at("metric").get<std::string>()};
      groups[key].push_back(row.at("value").get<double>());
    } catch (const json::exception& e) {
      throw ParseError(c.results, line_no, e.what());
    }
  }
  if (groups.empty()) throw EmptyEval("no result rows in " + c.results);

  auto os = open_out(c.summary);
  write_csv_header(os, c);
  os << "variant,task,transfer,init,label_frac,metric,n,mean,std\n";
  for (const auto& [key, xs] : groups) {
    const auto& [variant, task, transfer, init, frac, metric] = key;
    os << variant << ',' << task << ',' << transfer << ',' << init << ',' << fmt(frac) << ',' << metric << ','
       << xs.size() << ',' << fmt(mean_of(xs)) << ',' << fmt(std_of(xs)) << '\n';
    out << "evaluate: " << (variant.empty() ? init : variant) << " frac " << fmt(frac) << ' ' << metric << ' '
        << fmt(mean_of(xs)) << " +- " << fmt(std_of(xs)) << " (n=" << xs.size() << ")\n";
  }
  if (!os) throw DataError("cannot write " + c.summary);
  return 0;
}

int cmd_ablate(const RunConfig& c, std::ostream& out) {
  const auto results = run_ablation(c, thread_budget(), [&](const RunResult& r) {
    out << "ablate: " << r.variant << " seed " << r.seed_index << ' ' << r.metric << ' ' << fmt(r.value) << '\n';
  });

  auto table = open_out(c.table);
  write_csv_header(table, c);
  table << "variant,seed_index,seed,label_frac,metric,value,best_epoch\n";
  auto rows = open_out(c.results);
  rows << header_json(c).dump() << '\n';
  std::map<std::string, std::vector<double>> by_variant;
  for (const auto& r : results) {
    table << r.variant << ',' << r.seed_index << ',' << r.seed << ',' << fmt(r.label_fraction) << ',' << r.metric
          << ',' << fmt(r.value) << ',' << r.best_epoch << '\n';
    rows << result_row(c, r, true).dump() << '\n';
    by_variant[r.variant].push_back(r.value);
  }
  if (!table) throw DataError("cannot write " + c.table);
  if (!rows) throw DataError("cannot write " + c.results);
  const auto& order = c.variants.empty() ? all_variants() : c.variants;
  for (const auto& v : order)
    out << "ablate: " << v << " mean " << fmt(mean_of(by_variant[v])) << " std " << fmt(std_of(by_variant[v]))
        << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "ParseError";
  if (dynamic_cast<const ConsistencyError*>(&e)) return "ConsistencyError";
  if (dynamic_cast<const UnknownNode*>(&e)) return "UnknownNode";
  if (dynamic_cast<const EmptySplit*>(&e)) return "EmptySplit";
  if (dynamic_cast<const EmptyEval*>(&e)) return "EmptyEval";
  if (dynamic_cast<const DataError*>(&e)) return "DataError";
  if (dynamic_cast<const NumericalError*>(&e)) return "NumericalError";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "FilesystemError";
  return "Error";
}

void report(std::ostream& err, const std::string& kind, const std::string& message, json extra = json::object()) {
  json e{{"kind", kind}, {"message", message}};
  for (auto& [k, v] : extra.items()) e[k] = v;
  err << json{{"error", e}}.dump() << '\n';
}

// Turns leftover `--key=value` / `--key value` arguments into overrides.
std::vector<std::pair<std::string, std::string>> overrides_from(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (!a.starts_with("--") || a.size() == 2) throw ConfigError("", "unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else if (i + 1 < extras.size() && !extras[i + 1].starts_with("--")) {
      out.emplace_back(a.substr(2), extras[i + 1]);
      ++i;
    } else {
      throw ConfigError(a.substr(2), "missing value");
    }
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generative pre-training of graph neural networks on synthetic attributed graphs", "gptgnn"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(code_version()));
  std::string config_file;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "write the configured synthetic graph to graph_dir"},
      {"pretrain", "pre-train an encoder on the pre-training region and write a checkpoint"},
      {"finetune", "fine-tune from the checkpoint (or random init) over all seeds; write results JSONL"},
      {"evaluate", "summarize a results JSONL file into a CSV"},
      {"ablate", "pre-train and fine-tune every configured variant over all seeds; write a CSV table"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_file, "flat `key = value` config file");
    sub->allow_extras();
  }
  app.footer("Any config key can be overridden as --key=value (command line > file > preset).");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    if (code == 0) return 0;
    report(err, "UsageError", r.str().empty() ? e.what() : r.str());
    return 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    std::optional<std::string> file_text;
    if (!config_file.empty()) {
      try {
        file_text = read_file(config_file);
      } catch (const DataError& e) {
        throw ConfigError("config", e.what());
      }
    }
    const RunConfig c = resolve_config(file_text, overrides_from(sub->remaining()));
    const std::string& name = sub->get_name();
    if (name == "generate") return cmd_generate(c, out);
    if (name == "pretrain") return cmd_pretrain(c, out);
    if (name == "finetune") return cmd_finetune(c, out);
    if (name == "evaluate") return cmd_evaluate(c, out);
    return cmd_ablate(c, out);
  } catch (const ConfigError& e) {
    report(err, "ConfigError", e.what(), json{{"field", e.field()}});
    return 2;
  } catch (const IncompatibleCheckpoint& e) {
    report(err, "IncompatibleCheckpoint", e.what(), json{{"parameters", e.offending()}});
    return 3;
  } catch (const DataError& e) {
    report(err, error_kind(e), e.what());
    return 3;
  } catch (const fs::filesystem_error& e) {
    report(err, error_kind(e), e.what());
    return 3;
  } catch (const NumericalError& e) {
    report(err, "NumericalError", e.what());
    return 4;
  } catch (const std::exception& e) {
    report(err, error_kind(e), e.what());
    return 1;
  }
}

}  // namespace gptgnn::cli

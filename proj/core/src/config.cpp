#include "kepsvgp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kepsvgp::config {

namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& scope) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      fail(ErrorKind::InvalidConfig, "unknown config key '" + scope + it.key() + "'");
    }
  }
}

svgp::MergeScheme parse_merge(const std::string& s) {
  if (s == "addition") return svgp::MergeScheme::Addition;
  if (s == "concatenation") return svgp::MergeScheme::Concatenation;
  if (s == "concatenation-lowrank") return svgp::MergeScheme::ConcatenationLowRank;
  fail(ErrorKind::InvalidConfig, "unknown merge scheme '" + s + "'");
}

std::string merge_name(svgp::MergeScheme m) {
  switch (m) {
    case svgp::MergeScheme::Addition: return "addition";
    case svgp::MergeScheme::Concatenation: return "concatenation";
    case svgp::MergeScheme::ConcatenationLowRank: return "concatenation-lowrank";
  }
  return "addition";
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(root, {"model", "train", "data", "eval", "paths"}, "");

  RunConfig cfg;
  if (root.contains("model")) {
    const json& m = root.at("model");
    reject_unknown(m,
                   {"n_layers", "d_model", "n_heads", "d_k", "d_v", "d_ff", "rank_s", "merge",
                    "lowrank_sc", "kep_layers", "vocab_size", "max_seq_len", "n_classes"},
                   "model.");
    read(m, "n_layers", cfg.model.n_layers);
    read(m, "d_model", cfg.model.d_model);
    read(m, "n_heads", cfg.model.n_heads);
    read(m, "d_k", cfg.model.d_k);
    read(m, "d_v", cfg.model.d_v);
    cfg.model.d_ff = 2 * cfg.model.d_model;
    read(m, "d_ff", cfg.model.d_ff);
    read(m, "rank_s", cfg.model.rank_s);
    if (m.contains("merge")) cfg.model.merge = parse_merge(m.at("merge").get<std::string>());
    read(m, "lowrank_sc", cfg.model.lowrank_sc);
    cfg.model.kep_layers = {cfg.model.n_layers};  // default: replace the last layer
    if (m.contains("kep_layers")) {
      cfg.model.kep_layers = m.at("kep_layers").get<std::vector<std::size_t>>();
    }
    read(m, "vocab_size", cfg.model.vocab_size);
    read(m, "max_seq_len", cfg.model.max_seq_len);
    read(m, "n_classes", cfg.model.n_classes);
  }
  if (root.contains("train")) {
    const json& t = root.at("train");
    reject_unknown(t,
                   {"epochs", "batch_size", "lr_peak", "lr_floor", "warmup_epochs", "eta",
                    "seed", "mc_train_samples", "mc_eval_samples", "kl_scale_mode"},
                   "train.");
    read(t, "epochs", cfg.train.epochs);
    read(t, "batch_size", cfg.train.batch_size);
    read(t, "lr_peak", cfg.train.lr_peak);
    read(t, "lr_floor", cfg.train.lr_floor);
    read(t, "warmup_epochs", cfg.train.warmup_epochs);
    read(t, "eta", cfg.train.eta);
    read(t, "seed", cfg.train.seed);
    read(t, "mc_train_samples", cfg.train.mc_train_samples);
    read(t, "mc_eval_samples", cfg.train.mc_eval_samples);
    if (t.contains("kl_scale_mode")) {
      const std::string mode = t.at("kl_scale_mode").get<std::string>();
      if (mode == "minibatch") cfg.train.kl_scale = training::KlScaleMode::Minibatch;
      else if (mode == "none") cfg.train.kl_scale = training::KlScaleMode::None;
      else fail(ErrorKind::InvalidConfig, "kl_scale_mode must be 'minibatch' or 'none'");
    }
  }
  if (root.contains("data")) {
    const json& d = root.at("data");
    reject_unknown(d,
                   {"task", "n_train", "n_val", "n_test", "seq_len", "vocab", "classes", "seed",
                    "train_path", "val_path", "test_path"},
                   "data.");
    read(d, "task", cfg.data.task);
    read(d, "n_train", cfg.data.n_train);
    read(d, "n_val", cfg.data.n_val);
    read(d, "n_test", cfg.data.n_test);
    read(d, "seq_len", cfg.data.seq_len);
    read(d, "vocab", cfg.data.vocab);
    read(d, "classes", cfg.data.classes);
    read(d, "seed", cfg.data.seed);
    read(d, "train_path", cfg.data.train_path);
    read(d, "val_path", cfg.data.val_path);
    read(d, "test_path", cfg.data.test_path);
    if (cfg.data.task != "majority" && cfg.data.task != "csv") {
      fail(ErrorKind::InvalidConfig, "data.task must be 'majority' or 'csv'");
    }
  }
  if (root.contains("eval")) {
    const json& e = root.at("eval");
    reject_unknown(e, {"mc_samples", "ece_bins"}, "eval.");
    read(e, "mc_samples", cfg.eval.mc_samples);
    read(e, "ece_bins", cfg.eval.ece_bins);
  }
  if (root.contains("paths")) {
    const json& p = root.at("paths");
    reject_unknown(p, {"checkpoint_dir", "report_dir"}, "paths.");
    read(p, "checkpoint_dir", cfg.paths.checkpoint_dir);
    read(p, "report_dir", cfg.paths.report_dir);
  }
  cfg.model.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string to_json(const RunConfig& cfg) {
  ordered root;
  root["model"] = {{"n_layers", cfg.model.n_layers},
                   {"d_model", cfg.model.d_model},
                   {"n_heads", cfg.model.n_heads},
                   {"d_k", cfg.model.d_k},
                   {"d_v", cfg.model.d_v},
                   {"d_ff", cfg.model.d_ff},
                   {"rank_s", cfg.model.rank_s},
                   {"merge", merge_name(cfg.model.merge)},
                   {"lowrank_sc", cfg.model.lowrank_sc},
                   {"kep_layers", cfg.model.kep_layers},
                   {"vocab_size", cfg.model.vocab_size},
                   {"max_seq_len", cfg.model.max_seq_len},
                   {"n_classes", cfg.model.n_classes}};
  root["train"] = {
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"lr_peak", cfg.train.lr_peak},
      {"lr_floor", cfg.train.lr_floor},
      {"warmup_epochs", cfg.train.warmup_epochs},
      {"eta", cfg.train.eta},
      {"seed", cfg.train.seed},
      {"mc_train_samples", cfg.train.mc_train_samples},
      {"mc_eval_samples", cfg.train.mc_eval_samples},
      {"kl_scale_mode",
       cfg.train.kl_scale == training::KlScaleMode::Minibatch ? "minibatch" : "none"}};
  root["data"] = {{"task", cfg.data.task},       {"n_train", cfg.data.n_train},
                  {"n_val", cfg.data.n_val},     {"n_test", cfg.data.n_test},
                  {"seq_len", cfg.data.seq_len}, {"vocab", cfg.data.vocab},
                  {"classes", cfg.data.classes}, {"seed", cfg.data.seed},
                  {"train_path", cfg.data.train_path}, {"val_path", cfg.data.val_path},
                  {"test_path", cfg.data.test_path}};
  root["eval"] = {{"mc_samples", cfg.eval.mc_samples}, {"ece_bins", cfg.eval.ece_bins}};
  root["paths"] = {{"checkpoint_dir", cfg.paths.checkpoint_dir},
                   {"report_dir", cfg.paths.report_dir}};
  return root.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string snapshot = to_json(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : snapshot) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  for (int i = 15; i >= 0; --i) os << ((h >> (4 * i)) & 0xF);
  return os.str();
}

data::Dataset make_train_split(const DataConfig& d) {
  if (d.task == "csv") return data::load_csv(d.train_path);
  return data::gen_majority(d.n_train, d.seq_len, d.vocab, d.classes, Rng::derive(d.seed, 10));
}

data::Dataset make_val_split(const DataConfig& d) {
  if (d.task == "csv") return data::load_csv(d.val_path);
  return data::gen_majority(d.n_val, d.seq_len, d.vocab, d.classes, Rng::derive(d.seed, 11));
}

data::Dataset make_test_split(const DataConfig& d) {
  if (d.task == "csv") return data::load_csv(d.test_path);
  return data::gen_majority(d.n_test, d.seq_len, d.vocab, d.classes, Rng::derive(d.seed, 12));
}

}  // namespace kepsvgp::config

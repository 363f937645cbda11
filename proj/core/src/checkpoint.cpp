#include "kepsvgp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace kepsvgp::checkpoint {

namespace {

using ordered = nlohmann::ordered_json;

constexpr char kMagic[8] = {'K', 'E', 'P', 'C', 'K', 'P', 'T', '1'};

ordered model_config_json(const model::TransformerConfig& c) {
  ordered j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_k"] = c.d_k;
  j["d_v"] = c.d_v;
  j["d_ff"] = c.d_ff;
  j["rank_s"] = c.rank_s;
  j["merge"] = static_cast<int>(c.merge);
  j["lowrank_sc"] = c.lowrank_sc;
  j["kep_layers"] = c.kep_layers;
  j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["n_classes"] = c.n_classes;
  return j;
}

model::TransformerConfig model_config_from_json(const ordered& j) {
  model::TransformerConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_k = j.at("d_k").get<std::size_t>();
  c.d_v = j.at("d_v").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.rank_s = j.at("rank_s").get<std::size_t>();
  c.merge = static_cast<svgp::MergeScheme>(j.at("merge").get<int>());
  c.lowrank_sc = j.at("lowrank_sc").get<std::size_t>();
  c.kep_layers = j.at("kep_layers").get<std::vector<std::size_t>>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  return c;
}

}  // namespace

void save(const std::string& path, const model::Model& m, const CheckpointExtras& extras) {
  ordered manifest;
  manifest["format_version"] = 1;
  manifest["precision"] = "double";
  manifest["model_config"] = model_config_json(m.config);
  manifest["rng_state"] = extras.rng_state;
  manifest["config_hash"] = extras.config_hash;
  manifest["config_snapshot"] = extras.config_snapshot;

  ordered params = ordered::array();
  std::size_t offset = 0;
  std::vector<const Tensor*> tensors;
  model::visit_params(m, [&](const std::string& name, const Tensor& t) {
    ordered entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["bytes"] = t.size() * sizeof(double);
    params.push_back(entry);
    tensors.push_back(&t);
    offset += t.size() * sizeof(double);
  });
  manifest["params"] = params;
  manifest["blob_bytes"] = offset;

  const std::string manifest_text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = manifest_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
  for (const Tensor* t : tensors) {
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) fail(ErrorKind::IoError, "short write on checkpoint " + path);
}

LoadedCheckpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::CheckpointMismatch, path + " is not a checkpoint file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string manifest_text(len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::CheckpointMismatch, path + ": truncated manifest");

  ordered manifest;
  try {
    manifest = ordered::parse(manifest_text);
  } catch (const ordered::exception& e) {
    fail(ErrorKind::CheckpointMismatch, path + ": bad manifest: " + e.what());
  }
  if (manifest.at("format_version").get<int>() != 1) {
    fail(ErrorKind::CheckpointMismatch, path + ": unsupported format version");
  }

  LoadedCheckpoint out;
  out.extras.rng_state = manifest.at("rng_state").get<std::uint64_t>();
  out.extras.config_hash = manifest.at("config_hash").get<std::string>();
  out.extras.config_snapshot = manifest.at("config_snapshot").get<std::string>();
  out.model = model::init_model(model_config_from_json(manifest.at("model_config")), 0);

  const std::uint64_t blob_bytes = manifest.at("blob_bytes").get<std::uint64_t>();
  std::vector<char> blob(blob_bytes);
  in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
  if (!in || in.gcount() != static_cast<std::streamsize>(blob_bytes)) {
    fail(ErrorKind::CheckpointMismatch, path + ": truncated parameter blob");
  }

  const ordered& params = manifest.at("params");
  std::size_t cursor = 0, expected_offset = 0;
  model::visit_params(out.model, [&](const std::string& name, Tensor& t) {
    if (cursor >= params.size()) {
      fail(ErrorKind::CheckpointMismatch, path + ": manifest has too few parameters");
    }
    const ordered& entry = params[cursor++];
    if (entry.at("name").get<std::string>() != name) {
      fail(ErrorKind::CheckpointMismatch,
           path + ": parameter order mismatch at '" + name + "'");
    }
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape()) {
      fail(ErrorKind::CheckpointMismatch, path + ": shape mismatch for '" + name + "'");
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t bytes = entry.at("bytes").get<std::size_t>();
    if (offset != expected_offset || bytes != t.size() * sizeof(double) ||
        offset + bytes > blob_bytes) {
      fail(ErrorKind::CheckpointMismatch, path + ": offsets do not tile the blob at '" +
                                              name + "'");
    }
    std::memcpy(t.data(), blob.data() + offset, bytes);
    expected_offset = offset + bytes;
  });
  if (cursor != params.size() || expected_offset != blob_bytes) {
    fail(ErrorKind::CheckpointMismatch, path + ": manifest does not tile the blob");
  }
  return out;
}

}  // namespace kepsvgp::checkpoint

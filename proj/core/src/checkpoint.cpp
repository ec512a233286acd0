#include "nest/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

#include "nest/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace nest {

using json = nlohmann::json;

void save_checkpoint(const std::string& base_path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& config_json, const std::map<std::string, double>& meta) {
  json manifest;
  manifest["format"] = "nest-checkpoint-v1";
  manifest["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  manifest["meta"] = meta;

  json dir = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["dtype"] = "f64";
    entry["offset"] = offset;
    dir.push_back(entry);
    offset += t.size() * sizeof(double);
  }
  manifest["tensors"] = dir;
  manifest["blob_bytes"] = offset;

  std::ofstream mout(base_path + ".manifest", std::ios::binary);
  if (!mout) throw CheckpointError("cannot write " + base_path + ".manifest");
  mout << manifest.dump(2) << '\n';

  std::ofstream bout(base_path + ".blob", std::ios::binary);
  if (!bout) throw CheckpointError("cannot write " + base_path + ".blob");
  for (const auto& [name, t] : tensors) {
    bout.write(reinterpret_cast<const char*>(t.data().data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!bout) throw CheckpointError("short write to " + base_path + ".blob");
}

Checkpoint load_checkpoint(const std::string& base_path) {
  std::ifstream min(base_path + ".manifest", std::ios::binary);
  if (!min) throw CheckpointError("cannot open " + base_path + ".manifest");
  json manifest;
  try {
    min >> manifest;
  } catch (const json::parse_error&) {
    throw CheckpointError("corrupt manifest: " + base_path + ".manifest");
  }
  if (!manifest.contains("tensors") || !manifest.contains("blob_bytes") ||
      manifest.value("format", "") != "nest-checkpoint-v1") {
    throw CheckpointError("corrupt manifest: " + base_path + ".manifest");
  }

  std::ifstream bin(base_path + ".blob", std::ios::binary | std::ios::ate);
  if (!bin) throw CheckpointError("cannot open " + base_path + ".blob");
  const std::size_t blob_size = static_cast<std::size_t>(bin.tellg());
  if (blob_size != manifest["blob_bytes"].get<std::size_t>()) {
    throw CheckpointError("blob size disagrees with manifest");
  }
  bin.seekg(0);

  Checkpoint ckpt;
  ckpt.config_json = manifest["config"].dump();
  if (manifest.contains("meta")) {
    for (auto& [k, v] : manifest["meta"].items()) ckpt.meta[k] = v.get<double>();
  }

  for (const auto& entry : manifest["tensors"]) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (entry.at("dtype").get<std::string>() != "f64") {
      throw CheckpointError("unsupported dtype for tensor " + name);
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    std::size_t numel = 1;
    for (std::size_t e : shape) numel *= e;
    if (offset + numel * sizeof(double) > blob_size) {
      throw CheckpointError("tensor " + name + " extends past end of blob");
    }
    std::vector<double> data(numel);
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(data.data()),
             static_cast<std::streamsize>(numel * sizeof(double)));
    if (!bin) throw CheckpointError("short read for tensor " + name);
    ckpt.tensors.emplace_back(name, Tensor::from_data(shape, std::move(data)));
  }
  return ckpt;
}

void copy_checkpoint_into(const Checkpoint& ckpt,
                          const std::vector<std::pair<std::string, Tensor>>& dest) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  for (const auto& [name, t] : dest) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor " + name);
    if (it->second->shape() != t.shape()) {
      throw CheckpointError("shape mismatch for tensor " + name);
    }
    const_cast<Tensor&>(t).data() = it->second->data();
  }
}

std::string nest_config_to_json(const NestConfig& cfg) {
  json j;
  j["layers"] = cfg.layers;
  j["d_model"] = cfg.d_model;
  j["d_ff"] = cfg.d_ff;
  j["n_heads"] = cfg.n_heads;
  j["d_head"] = cfg.d_head;
  j["vocab_size"] = cfg.vocab_size;
  j["n"] = cfg.n;
  j["m"] = cfg.m;
  j["rope_base"] = cfg.rope_base;
  j["dropout"] = cfg.dropout;
  j["probe_classes"] = cfg.probe_classes;
  j["cls_gets_time2vec"] = cfg.cls_gets_time2vec;
  j["seed"] = cfg.seed;
  return j.dump();
}

NestConfig nest_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error&) {
    throw CheckpointError("invalid model config JSON");
  }
  NestConfig cfg;
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.d_ff = j.at("d_ff").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.d_head = j.at("d_head").get<std::size_t>();
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.n = j.at("n").get<std::size_t>();
  cfg.m = j.at("m").get<std::size_t>();
  cfg.rope_base = j.at("rope_base").get<double>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.probe_classes = j.at("probe_classes").get<std::size_t>();
  cfg.cls_gets_time2vec = j.at("cls_gets_time2vec").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

void save_model_checkpoint(const std::string& base_path, const NestModel& model,
                           const AdamW* optim, std::map<std::string, double> meta) {
  auto tensors = model.named_parameters();
  if (optim != nullptr) {
    auto names = model.named_parameters();
    auto& m = const_cast<AdamW*>(optim)->first_moments();
    auto& v = const_cast<AdamW*>(optim)->second_moments();
    if (m.size() != names.size()) {
      throw CheckpointError("optimizer state does not match model parameters");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      tensors.emplace_back("optim.m." + names[i].first,
                           Tensor::from_data(names[i].second.shape(), m[i]));
      tensors.emplace_back("optim.v." + names[i].first,
                           Tensor::from_data(names[i].second.shape(), v[i]));
    }
    meta["optim.step"] = static_cast<double>(optim->step_count());
  }
  save_checkpoint(base_path, tensors, nest_config_to_json(model.config()), meta);
}

LoadedModel load_model_checkpoint(const std::string& base_path) {
  Checkpoint ckpt = load_checkpoint(base_path);
  LoadedModel out{NestModel::init(nest_config_from_json(ckpt.config_json))};
  out.meta = ckpt.meta;
  copy_checkpoint_into(ckpt, out.model.named_parameters());

  auto names = out.model.named_parameters();
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  bool all_moments = true;
  for (const auto& [name, t] : names) {
    if (!by_name.count("optim.m." + name) || !by_name.count("optim.v." + name)) {
      all_moments = false;
      break;
    }
  }
  if (all_moments && ckpt.meta.count("optim.step")) {
    out.has_optim_state = true;
    for (const auto& [name, t] : names) {
      out.optim_m.push_back(by_name.at("optim.m." + name)->data());
      out.optim_v.push_back(by_name.at("optim.v." + name)->data());
    }
    out.optim_step = static_cast<std::size_t>(ckpt.meta.at("optim.step"));
  }
  return out;
}

}  // namespace nest

#include "homsurro/pipeline/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace homsurro::pipeline {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using seqmodel::MicroEncoding;
using seqmodel::SurrogateConfig;

std::string micro_name(MicroEncoding m) {
  switch (m) {
    case MicroEncoding::none: return "none";
    case MicroEncoding::descriptor: return "pca";
    case MicroEncoding::image: return "cnn";
  }
  return "none";
}

MicroEncoding micro_from_name(const std::string& s) {
  if (s == "none") return MicroEncoding::none;
  if (s == "pca") return MicroEncoding::descriptor;
  if (s == "cnn") return MicroEncoding::image;
  throw std::runtime_error("unknown micro encoding: " + s);
}

ordered_json config_to_json(const SurrogateConfig& c) {
  ordered_json j;
  j["d_model"] = c.d_model;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["ff_dim"] = c.ff_dim;
  j["grn_hidden"] = c.grn_hidden;
  j["grn_stack"] = c.grn_stack;
  j["dropout"] = c.dropout;
  j["strain_dim"] = c.strain_dim;
  j["stress_dim"] = c.stress_dim;
  j["max_len"] = c.max_len;
  j["micro"] = micro_name(c.micro);
  j["micro_dim"] = c.micro_dim;
  if (c.micro == MicroEncoding::image) {
    ordered_json cj;
    cj["input_res"] = c.cnn.input_res;
    cj["in_channels"] = c.cnn.in_channels;
    cj["blocks"] = ordered_json::array();
    for (const auto& b : c.cnn.blocks)
      cj["blocks"].push_back(
          {b.out_channels, b.kernel, b.batch_norm, b.pool});
    cj["fc_hidden"] = c.cnn.fc_hidden;
    cj["outputs"] = c.cnn.outputs;
    cj["dropout"] = c.cnn.dropout;
    j["cnn"] = cj;
  }
  return j;
}

SurrogateConfig config_from_json(const json& j) {
  SurrogateConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.grn_hidden = j.at("grn_hidden").get<std::size_t>();
  c.grn_stack = j.at("grn_stack").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.strain_dim = j.at("strain_dim").get<std::size_t>();
  c.stress_dim = j.at("stress_dim").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.micro = micro_from_name(j.at("micro").get<std::string>());
  c.micro_dim = j.at("micro_dim").get<std::size_t>();
  if (c.micro == MicroEncoding::image) {
    const auto& cj = j.at("cnn");
    c.cnn.input_res = cj.at("input_res").get<std::size_t>();
    c.cnn.in_channels = cj.at("in_channels").get<std::size_t>();
    c.cnn.blocks.clear();
    for (const auto& b : cj.at("blocks"))
      c.cnn.blocks.push_back({b.at(0).get<std::size_t>(),
                              b.at(1).get<std::size_t>(), b.at(2).get<bool>(),
                              b.at(3).get<bool>()});
    c.cnn.fc_hidden = cj.at("fc_hidden").get<std::vector<std::size_t>>();
    c.cnn.outputs = cj.at("outputs").get<std::size_t>();
    c.cnn.dropout = cj.at("dropout").get<double>();
  }
  return c;
}

struct NamedTensorView {
  std::string name;
  const ndcore::Tensor* tensor;
  bool trainable;
};

// model tensors plus the PCA basis appended as non-trainable tensors
std::vector<NamedTensorView> tensor_index(
    seqmodel::SurrogateModel& model,
    const std::optional<descriptors::PCABasis>& pca,
    std::vector<ndcore::Tensor>& pca_storage) {
  std::vector<NamedTensorView> out;
  for (const auto& p : model.params())
    out.push_back({p.name, p.tensor, p.trainable});
  if (pca) {
    pca_storage.clear();
    pca_storage.emplace_back(
        ndcore::Tensor({pca->dim}, std::vector<double>(pca->mean)));
    pca_storage.emplace_back(ndcore::Tensor(
        {pca->k, pca->dim}, std::vector<double>(pca->components)));
    out.push_back({"pca.mean", &pca_storage[0], false});
    out.push_back({"pca.components", &pca_storage[1], false});
  }
  return out;
}

void write_f32(std::ofstream& out, const ndcore::Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const float f = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
}

void read_f32(std::ifstream& in, ndcore::Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), sizeof(f));
    t[i] = static_cast<double>(f);
  }
}

}  // namespace

void save_checkpoint(const std::string& dir, seqmodel::SurrogateModel& model,
                     const Standardizer& standardizer,
                     const std::optional<descriptors::PCABasis>& pca,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  std::vector<ndcore::Tensor> pca_storage;
  const auto index = tensor_index(model, pca, pca_storage);

  ordered_json manifest;
  manifest["format"] = "homsurro-checkpoint-1";
  manifest["config"] = config_to_json(model.cfg);
  manifest["standardizer"] = {{"strain_mean", standardizer.strain_mean},
                              {"strain_std", standardizer.strain_std},
                              {"stress_mean", standardizer.stress_mean},
                              {"stress_std", standardizer.stress_std}};
  if (pca) {
    manifest["pca"] = {{"dim", pca->dim},
                       {"k", pca->k},
                       {"explained_variance_ratio",
                        pca->explained_variance_ratio}};
  }
  manifest["meta"] = {{"seed", meta.seed},
                      {"epochs", meta.epochs},
                      {"steps", meta.steps},
                      {"best_val_mse", meta.best_val_mse},
                      {"note", meta.note}};
  manifest["tensors"] = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& t : index) {
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", t.tensor->shape()},
                                   {"offset", offset},
                                   {"trainable", t.trainable}});
    offset += t.tensor->numel();
  }

  {
    std::ofstream out(dir + "/weights.bin", std::ios::binary);
    if (!out)
      throw std::runtime_error("cannot open for writing: " + dir +
                               "/weights.bin");
    for (const auto& t : index) write_f32(out, *t.tensor);
    if (!out) throw std::runtime_error("write failed: " + dir + "/weights.bin");
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out)
    throw std::runtime_error("cannot open for writing: " + dir +
                             "/manifest.json");
  out << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("cannot open: " + dir + "/manifest.json");
  const auto manifest = json::parse(mf);
  if (manifest.value("format", "") != "homsurro-checkpoint-1")
    throw std::runtime_error("not a checkpoint manifest: " + dir);

  LoadedCheckpoint lc;
  lc.model = seqmodel::SurrogateModel::build(
      config_from_json(manifest.at("config")));
  const auto& sj = manifest.at("standardizer");
  lc.standardizer.strain_mean = sj.at("strain_mean");
  lc.standardizer.strain_std = sj.at("strain_std");
  lc.standardizer.stress_mean = sj.at("stress_mean");
  lc.standardizer.stress_std = sj.at("stress_std");
  const auto& mj = manifest.at("meta");
  lc.meta.seed = mj.at("seed").get<std::uint64_t>();
  lc.meta.epochs = mj.at("epochs").get<std::size_t>();
  lc.meta.steps = mj.at("steps").get<std::size_t>();
  lc.meta.best_val_mse = mj.at("best_val_mse").get<double>();
  lc.meta.note = mj.at("note").get<std::string>();

  if (manifest.contains("pca")) {
    descriptors::PCABasis basis;
    basis.dim = manifest["pca"].at("dim").get<std::size_t>();
    basis.k = manifest["pca"].at("k").get<std::size_t>();
    basis.explained_variance_ratio =
        manifest["pca"].at("explained_variance_ratio")
            .get<std::vector<double>>();
    lc.pca = std::move(basis);
  }

  std::ifstream wf(dir + "/weights.bin", std::ios::binary);
  if (!wf) throw std::runtime_error("cannot open: " + dir + "/weights.bin");

  auto refs = lc.model.params();
  std::size_t loaded = 0;
  for (const auto& tj : manifest.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const auto shape = tj.at("shape").get<ndcore::Shape>();
    ndcore::Tensor buf(shape);
    read_f32(wf, buf);
    if (!wf) throw std::runtime_error("truncated weights.bin in " + dir);
    if (name == "pca.mean" && lc.pca) {
      lc.pca->mean.assign(buf.data(), buf.data() + buf.numel());
      continue;
    }
    if (name == "pca.components" && lc.pca) {
      lc.pca->components.assign(buf.data(), buf.data() + buf.numel());
      continue;
    }
    for (auto& r : refs)
      if (r.name == name) {
        if (r.tensor->shape() != shape)
          throw std::runtime_error("checkpoint shape mismatch for " + name);
        *r.tensor = std::move(buf);
        ++loaded;
        break;
      }
  }
  if (loaded != refs.size())
    throw std::runtime_error("checkpoint is missing model tensors");
  return lc;
}

std::size_t load_matching_weights(const std::string& dir,
                                  seqmodel::SurrogateModel& model) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("cannot open: " + dir + "/manifest.json");
  const auto manifest = json::parse(mf);
  std::ifstream wf(dir + "/weights.bin", std::ios::binary);
  if (!wf) throw std::runtime_error("cannot open: " + dir + "/weights.bin");

  auto refs = model.params();
  std::size_t loaded = 0;
  for (const auto& tj : manifest.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const auto shape = tj.at("shape").get<ndcore::Shape>();
    ndcore::Tensor buf(shape);
    read_f32(wf, buf);
    if (!wf) throw std::runtime_error("truncated weights.bin in " + dir);
    for (auto& r : refs)
      if (r.name == name && r.tensor->shape() == shape) {
        *r.tensor = std::move(buf);
        ++loaded;
        break;
      }
  }
  return loaded;
}

void save_resume_state(const std::string& dir, seqmodel::SurrogateModel& model,
                       Adam& adam, std::size_t next_epoch) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/resume.bin", std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open for writing: " + dir + "/resume.bin");
  const std::uint64_t magic = 0x484f4d52455355ULL;  // "HOMRESU"
  const std::uint64_t epoch = next_epoch;
  const std::uint64_t steps = adam.steps();
  out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
  out.write(reinterpret_cast<const char*>(&epoch), sizeof(epoch));
  out.write(reinterpret_cast<const char*>(&steps), sizeof(steps));
  auto dump = [&](const ndcore::Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  };
  for (const auto& p : model.params()) dump(*p.tensor);
  for (const auto& t : adam.first_moments()) dump(t);
  for (const auto& t : adam.second_moments()) dump(t);
  if (!out) throw std::runtime_error("write failed: " + dir + "/resume.bin");
}

std::optional<std::size_t> load_resume_state(const std::string& dir,
                                             seqmodel::SurrogateModel& model,
                                             Adam& adam) {
  std::ifstream in(dir + "/resume.bin", std::ios::binary);
  if (!in) return std::nullopt;
  std::uint64_t magic = 0, epoch = 0, steps = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  in.read(reinterpret_cast<char*>(&epoch), sizeof(epoch));
  in.read(reinterpret_cast<char*>(&steps), sizeof(steps));
  if (!in || magic != 0x484f4d52455355ULL)
    throw std::runtime_error("corrupt resume state in " + dir);
  auto slurp = [&](ndcore::Tensor& t) {
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  };
  for (auto& p : model.params()) slurp(*p.tensor);
  for (auto& t : adam.first_moments()) slurp(t);
  for (auto& t : adam.second_moments()) slurp(t);
  if (!in) throw std::runtime_error("truncated resume state in " + dir);
  adam.set_steps(steps);
  return epoch;
}

}  // namespace homsurro::pipeline

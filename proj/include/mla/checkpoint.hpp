#pragma once

// Checkpoint directory: manifest.json (version "mla-ckpt/1", kind, dims, array
// table, step) and params.bin, the little-endian f64 arrays concatenated in
// manifest order. Round-trips are bit-exact.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mla/baselines.hpp"
#include "mla/binio.hpp"
#include "mla/error.hpp"
#include "mla/model.hpp"

namespace mla {

inline constexpr const char* kCheckpointVersion = "mla-ckpt/1";

using AnyModel = std::variant<ModelParams, ConcatModel, LateFusionModel>;

inline const char* model_kind(const AnyModel& m) {
  switch (m.index()) {
    case 0: return "mla";
    case 1: return "concat";
    default: return "late";
  }
}

struct Checkpoint {
  AnyModel model;
  std::uint64_t step = 0;
};

namespace detail {

using ArrayVisitor = std::function<void(const std::string& name, std::vector<std::size_t> shape, std::vector<double>& data)>;

inline void visit_encoder(EncoderParams& e, const std::string& prefix, const ArrayVisitor& f) {
  for (std::size_t l = 0; l < e.layers.size(); ++l) {
    auto& layer = e.layers[l];
    const std::string p = prefix + ".layer." + std::to_string(l);
    f(p + ".weight", {layer.weight.rows, layer.weight.cols}, layer.weight.data);
    f(p + ".bias", {layer.bias.size()}, layer.bias);
  }
}

inline void visit_head(HeadParams& h, const std::string& prefix, const ArrayVisitor& f) {
  f(prefix + ".weight", {h.weight.rows, h.weight.cols}, h.weight.data);
  f(prefix + ".bias", {h.bias.size()}, h.bias);
}

// Canonical array order: encoders by modality, layer by layer, then head(s).
inline void visit_arrays(AnyModel& model, const ArrayVisitor& f) {
  std::visit(
      [&](auto& m) {
        for (std::size_t i = 0; i < m.encoders.size(); ++i) visit_encoder(m.encoders[i], "encoder." + std::to_string(i), f);
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LateFusionModel>) {
          for (std::size_t i = 0; i < m.heads.size(); ++i) visit_head(m.heads[i], "head." + std::to_string(i), f);
        } else {
          visit_head(m.head, "head", f);
        }
      },
      model);
}

inline EncoderParams encoder_skeleton(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  EncoderParams e;
  for (std::size_t h : hidden) {
    e.layers.push_back({Mat(h, in), Vec(h, 0.0)});
    in = h;
  }
  e.layers.push_back({Mat(out, in), Vec(out, 0.0)});
  return e;
}

// Zero-valued model of the given kind and dims.
inline AnyModel model_skeleton(const std::string& kind, const ModelDims& dims) {
  std::vector<EncoderParams> enc;
  for (std::size_t d : dims.input_dims) enc.push_back(encoder_skeleton(d, dims.hidden, dims.embed_dim));
  const std::size_t s = dims.embed_dim, c = dims.class_count;
  if (kind == "mla") return ModelParams{dims, std::move(enc), {Mat(s, c), Vec(c, 0.0)}};
  if (kind == "concat") return ConcatModel{dims, std::move(enc), {Mat(dims.modality_count() * s, c), Vec(c, 0.0)}};
  if (kind == "late") {
    LateFusionModel lf{dims, std::move(enc), {}, std::vector<bool>(dims.modality_count(), true)};
    for (std::size_t m = 0; m < dims.modality_count(); ++m) lf.heads.push_back({Mat(s, c), Vec(c, 0.0)});
    return lf;
  }
  throw schema_error("unknown checkpoint kind \"" + kind + "\"");
}

inline const ModelDims& dims_of(const AnyModel& m) {
  return std::visit([](const auto& x) -> const ModelDims& { return x.dims; }, m);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());

  AnyModel model = ckpt.model;
  const ModelDims& dims = detail::dims_of(model);
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["kind"] = model_kind(model);
  manifest["step"] = ckpt.step;
  manifest["dims"] = {{"modalities", dims.modality_count()},
                      {"input_dims", dims.input_dims},
                      {"hidden", dims.hidden},
                      {"embed_dim", dims.embed_dim},
                      {"class_count", dims.class_count}};
  if (const auto* lf = std::get_if<LateFusionModel>(&model)) manifest["trained"] = lf->trained;
  nlohmann::json arrays = nlohmann::json::array();
  std::string payload;
  detail::visit_arrays(model, [&](const std::string& name, std::vector<std::size_t> shape, std::vector<double>& data) {
    if (!all_finite(data)) throw numeric_error("checkpoint array " + name + " is not finite", ckpt.step);
    arrays.push_back({{"name", name}, {"shape", shape}});
    binio::append_f64(payload, data);
  });
  manifest["arrays"] = arrays;
  manifest["payload"] = {{"file", "params.bin"}, {"encoding", "f64-le"}, {"bytes", payload.size()}};
  binio::write_json(dir / "manifest.json", manifest);
  binio::write_file(dir / "params.bin", payload);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const nlohmann::json manifest = binio::read_json(dir / "manifest.json");
  std::string kind;
  ModelDims dims;
  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> declared;
  try {
    if (manifest.at("version").get<std::string>() != kCheckpointVersion)
      throw schema_error("unsupported checkpoint version " + manifest.at("version").dump());
    kind = manifest.at("kind").get<std::string>();
    ckpt.step = manifest.at("step").get<std::uint64_t>();
    const auto& d = manifest.at("dims");
    dims.input_dims = d.at("input_dims").get<std::vector<std::size_t>>();
    dims.hidden = d.at("hidden").get<std::vector<std::size_t>>();
    dims.embed_dim = d.at("embed_dim").get<std::size_t>();
    dims.class_count = d.at("class_count").get<std::uint32_t>();
    if (d.at("modalities").get<std::size_t>() != dims.input_dims.size())
      throw schema_error("checkpoint dims: modalities differs from input_dims length");
    for (const auto& a : manifest.at("arrays"))
      declared.emplace_back(a.at("name").get<std::string>(), a.at("shape").get<std::vector<std::size_t>>());
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(std::string("checkpoint manifest.json: ") + e.what());
  }
  try {
    validate(dims);
  } catch (const contract_error& e) {
    throw schema_error(std::string("checkpoint dims: ") + e.what());
  }

  AnyModel model = detail::model_skeleton(kind, dims);
  if (auto* lf = std::get_if<LateFusionModel>(&model)) {
    try {
      lf->trained = manifest.at("trained").get<std::vector<bool>>();
    } catch (const nlohmann::json::exception& e) {
      throw schema_error(std::string("checkpoint manifest.json: ") + e.what());
    }
    if (lf->trained.size() != dims.modality_count()) throw schema_error("checkpoint: trained flags differ from M");
  }

  std::size_t expected_bytes = 0, slot = 0;
  detail::visit_arrays(model, [&](const std::string& name, std::vector<std::size_t> shape, std::vector<double>& data) {
    if (slot >= declared.size() || declared[slot].first != name || declared[slot].second != shape)
      throw schema_error("checkpoint array table does not match dims at entry " + std::to_string(slot) + " (" + name + ")");
    ++slot;
    expected_bytes += data.size() * 8;
  });
  if (slot != declared.size()) throw schema_error("checkpoint declares more arrays than its dims allow");

  const std::string payload = binio::read_file(dir / "params.bin");
  binio::expect_size(payload, expected_bytes, "params.bin");
  std::size_t at = 0;
  detail::visit_arrays(model, [&](const std::string&, std::vector<std::size_t>, std::vector<double>& data) {
    for (double& v : data) {
      v = binio::read_f64(payload, at);
      at += 8;
    }
  });
  ckpt.model = std::move(model);
  return ckpt;
}

}  // namespace mla

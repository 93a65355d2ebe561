#pragma once

// Checkpoint archives: "SVCK" | u32le manifest length | JSON manifest | f32le
// blocks. The manifest records the network kind, its config, the training
// step, seed and loss history, and each block's name, shape and float offset.
// Optimizer moments are stored as "adam.m/<param>" and "adam.v/<param>".

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svin/interp_net.hpp"
#include "svin/io.hpp"
#include "svin/motion_net.hpp"

namespace svin {

inline constexpr char kCheckpointMagic[4] = {'S', 'V', 'C', 'K'};

NLOHMANN_JSON_SERIALIZE_ENUM(Reduction, {{Reduction::sum, "sum"}, {Reduction::mean, "mean"}})

inline void to_json(nlohmann::json& j, const MotionConfig& c) {
  j = {{"base_width", c.base_width},
       {"encoder_depth", c.encoder_depth},
       {"learning_rate", c.learning_rate},
       {"similarity_weight", c.similarity_weight},
       {"smoothness_weight", c.smoothness_weight},
       {"smoothness_reduction", c.smoothness_reduction}};
}

inline void from_json(const nlohmann::json& j, MotionConfig& c) {
  c.base_width = j.value("base_width", c.base_width);
  c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.similarity_weight = j.value("similarity_weight", c.similarity_weight);
  c.smoothness_weight = j.value("smoothness_weight", c.smoothness_weight);
  c.smoothness_reduction = j.value("smoothness_reduction", c.smoothness_reduction);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"similar", w.similar}, {"regression", w.regression}, {"bidirectional", w.bidirectional}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w.similar = j.value("similar", w.similar);
  w.regression = j.value("regression", w.regression);
  w.bidirectional = j.value("bidirectional", w.bidirectional);
}

inline void to_json(nlohmann::json& j, const InterpConfig& c) {
  j = {{"base_width", c.base_width},
       {"learning_rate", c.learning_rate},
       {"weights", c.weights},
       {"bidirectional_reduction", c.bidirectional_reduction},
       {"consistent_scaffold", c.consistent_scaffold}};
}

inline void from_json(const nlohmann::json& j, InterpConfig& c) {
  c.base_width = j.value("base_width", c.base_width);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  c.bidirectional_reduction = j.value("bidirectional_reduction", c.bidirectional_reduction);
  c.consistent_scaffold = j.value("consistent_scaffold", c.consistent_scaffold);
}

template <class Net>
inline constexpr const char* checkpoint_kind = nullptr;
template <>
inline constexpr const char* checkpoint_kind<MotionParams> = "motion";
template <>
inline constexpr const char* checkpoint_kind<InterpParams> = "interp";

template <class Net>
std::vector<std::uint8_t> encode_checkpoint(const TrainState<Net>& st) {
  nlohmann::json blocks = nlohmann::json::array();
  std::vector<const Tensor<float>*> tensors;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const Tensor<float>& t) {
    const Dims d = t.dims();
    blocks.push_back({{"name", name}, {"shape", {t.channels(), d.d, d.h, d.w}}, {"offset", offset}});
    tensors.push_back(&t);
    offset += t.size();
  };
  const auto& entries = st.net.params().entries();
  for (const auto& [name, v] : entries) add(name, v.value());
  const auto& m = st.optimizer.first_moments();
  const auto& s = st.optimizer.second_moments();
  if (m.size() == entries.size()) {
    for (std::size_t k = 0; k < entries.size(); ++k) add("adam.m/" + entries[k].first, m[k]);
    for (std::size_t k = 0; k < entries.size(); ++k) add("adam.v/" + entries[k].first, s[k]);
  }
  const nlohmann::json manifest = {{"kind", checkpoint_kind<Net>},
                                   {"config", st.net.config()},
                                   {"step", st.step},
                                   {"seed", st.seed},
                                   {"optimizer_steps", st.optimizer.steps()},
                                   {"history", st.history},
                                   {"blocks", blocks}};
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  std::size_t pos = out.size();
  out.resize(pos + 4 * offset);
  for (const auto* t : tensors) {
    for (std::size_t i = 0; i < t->size(); ++i, pos += 4) detail::put_f32le(out.data() + pos, (*t)[i]);
  }
  return out;
}

template <class Net>
TrainState<Net> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  using K = ParseError::Kind;
  using Config = std::decay_t<decltype(std::declval<Net>().config())>;
  if (bytes.size() < 8) throw ParseError(K::truncated, "checkpoint: file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw ParseError(K::bad_magic, "checkpoint: magic mismatch");
  const std::uint32_t mlen = detail::get_u32le(bytes.data() + 4);
  if (bytes.size() - 8 < mlen) throw ParseError(K::truncated, "checkpoint: manifest truncated");
  const std::uint8_t* payload = bytes.data() + 8 + mlen;
  const std::size_t payload_floats = (bytes.size() - 8 - mlen) / 4;

  TrainState<Net> st;
  try {
    const auto manifest =
        nlohmann::json::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()) + 8, mlen));
    const std::string kind = manifest.at("kind").get<std::string>();
    if (kind != checkpoint_kind<Net>) {
      throw ParseError(K::bad_header, std::string("checkpoint holds a ") + kind + " network, expected " +
                                          checkpoint_kind<Net>);
    }
    const Config config = manifest.at("config").get<Config>();
    st.step = manifest.at("step").get<long>();
    st.seed = manifest.at("seed").get<std::uint64_t>();
    st.history = manifest.at("history").get<std::vector<double>>();

    nn::ParamSet<float> params;
    std::vector<std::pair<std::string, Tensor<float>>> moments;
    for (const auto& b : manifest.at("blocks")) {
      const auto shape = b.at("shape").get<std::vector<int>>();
      const auto offset = b.at("offset").get<std::size_t>();
      if (shape.size() != 4) throw ParseError(K::bad_header, "checkpoint: block shape needs 4 entries");
      Tensor<float> t(shape[0], Dims{shape[1], shape[2], shape[3]});
      if (offset + t.size() > payload_floats) {
        throw ParseError(K::payload_size, "checkpoint: block " + b.at("name").get<std::string>() + " exceeds payload");
      }
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f32le(payload + 4 * (offset + i));
      const std::string name = b.at("name").get<std::string>();
      if (name.rfind("adam.", 0) == 0) {
        moments.emplace_back(name, std::move(t));
      } else {
        params.add(name, std::move(t));
      }
    }
    const Net reference(config, 0);
    if (params.entries().size() != reference.params().entries().size()) {
      throw ParseError(K::bad_header, "checkpoint: parameter blocks do not match the configured architecture");
    }
    for (const auto& [name, v] : reference.params().entries()) {
      if (!params.contains(name) || !(params.get(name).value().dims() == v.value().dims()) ||
          params.get(name).channels() != v.channels()) {
        throw ParseError(K::bad_header, "checkpoint: block " + name + " missing or misshapen");
      }
    }
    st.net = Net(config, std::move(params));
    st.optimizer = nn::Adam<float>(st.net.params());
    st.optimizer.set_steps(manifest.value("optimizer_steps", 0L));
    const auto& entries = st.net.params().entries();
    for (auto& [name, t] : moments) {
      const bool first = name.rfind("adam.m/", 0) == 0;
      const std::string pname = name.substr(7);
      for (std::size_t k = 0; k < entries.size(); ++k) {
        if (entries[k].first != pname) continue;
        auto& dst = first ? st.optimizer.first_moments()[k] : st.optimizer.second_moments()[k];
        if (!(dst.dims() == t.dims()) || dst.channels() != t.channels()) {
          throw ParseError(K::bad_header, "checkpoint: moment " + name + " misshapen");
        }
        dst = std::move(t);
        break;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(K::bad_header, std::string("checkpoint: bad manifest: ") + e.what());
  }
  return st;
}

template <class Net>
void save_checkpoint(const fs::path& path, const TrainState<Net>& st) {
  detail::write_bytes(path, encode_checkpoint(st));
}

inline MotionTrainState load_motion_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint " + path.string() + " does not exist");
  return decode_checkpoint<MotionParams>(detail::read_bytes(path));
}

inline InterpTrainState load_interp_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint " + path.string() + " does not exist");
  return decode_checkpoint<InterpParams>(detail::read_bytes(path));
}

}  // namespace svin

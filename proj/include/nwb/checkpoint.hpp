#pragma once

#include "nwb/objectives.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>

namespace nwb {

// Checkpoint file layout:
//   "NWBCKPT1"                       8 bytes
//   header length L                  uint64, little endian
//   header                           L bytes of JSON: architecture, block
//                                    names, shapes and constraint flags
//   weights                          every block's doubles, row-major, in
//                                    header order, IEEE-754 little endian
// Weights round-trip bit for bit.

class CheckpointError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline nlohmann::json activation_json(const Activation& a) { return {{"kind", a.name()}, {"param", a.param}}; }

inline Activation activation_from_json(const nlohmann::json& j) {
  return Activation::from_name(j.at("kind").get<std::string>(), j.at("param").get<double>());
}

inline nlohmann::json blocks_json(const std::vector<ParamBlock>& blocks) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : blocks)
    out.push_back({{"name", b.name}, {"shape", {b.value.rows(), b.value.cols()}}, {"constrained", b.sign_constrained}});
  return out;
}

// Checks that a freshly built network has the block layout the header
// describes; values are filled in afterwards.
inline void check_layout(const std::vector<ParamBlock>& built, const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != built.size())
    throw CheckpointError(what + ": block count " + std::to_string(j.size()) + " does not match architecture (" +
                          std::to_string(built.size()) + ")");
  for (std::size_t i = 0; i < built.size(); ++i) {
    const auto& b = built[i];
    const auto shape = j[i].at("shape").get<std::vector<Index>>();
    if (j[i].at("name").get<std::string>() != b.name || shape.size() != 2 || shape[0] != b.value.rows() ||
        shape[1] != b.value.cols() || j[i].at("constrained").get<bool>() != b.sign_constrained)
      throw CheckpointError(what + ": block " + std::to_string(i) + " does not match architecture");
  }
}

inline nlohmann::json arch_json(const FicnnParams& p) {
  nlohmann::json acts = nlohmann::json::array();
  for (const auto& a : p.activations) acts.push_back(activation_json(a));
  return {{"type", "ficnn"},     {"input_dim", p.input_dim}, {"widths", p.widths},
          {"activations", acts}, {"quadratic", p.quadratic}, {"blocks", blocks_json(p.blocks)}};
}

inline nlohmann::json arch_json(const PicnnParams& p) {
  return {{"type", "picnn"},
          {"input_dim", p.input_dim},
          {"context_dim", p.context_dim},
          {"widths", p.widths},
          {"activation", activation_json(p.activation)},
          {"quadratic", p.quadratic},
          {"blocks", blocks_json(p.blocks)}};
}

inline nlohmann::json arch_json(const GeneratorParams& p) {
  return {{"type", "generator"},         {"latent_dim", p.latent_dim},
          {"output_dim", p.output_dim},  {"context_dim", p.context_dim},
          {"widths", p.widths},          {"activation", activation_json(p.activation)},
          {"blocks", blocks_json(p.blocks)}};
}

inline void expect_type(const nlohmann::json& j, const char* type) {
  if (j.at("type").get<std::string>() != type)
    throw CheckpointError(std::string("expected a ") + type + " network, found " + j.at("type").get<std::string>());
}

inline FicnnParams ficnn_from_json(const nlohmann::json& j) {
  expect_type(j, "ficnn");
  std::vector<Activation> acts;
  for (const auto& a : j.at("activations")) acts.push_back(activation_from_json(a));
  const auto widths = j.at("widths").get<std::vector<Index>>();
  if (acts.size() != widths.size()) throw CheckpointError("ficnn: one activation per hidden layer expected");
  std::mt19937_64 rng(0);
  FicnnParams p = make_ficnn(j.at("input_dim").get<Index>(), widths,
                             acts.empty() ? Activation::celu() : acts.front(), rng, j.at("quadratic").get<double>());
  p.activations = acts;
  check_layout(p.blocks, j.at("blocks"), "ficnn");
  return p;
}

inline PicnnParams picnn_from_json(const nlohmann::json& j) {
  expect_type(j, "picnn");
  std::mt19937_64 rng(0);
  PicnnParams p = make_picnn(j.at("input_dim").get<Index>(), j.at("context_dim").get<Index>(),
                             j.at("widths").get<std::vector<Index>>(), activation_from_json(j.at("activation")), rng,
                             j.at("quadratic").get<double>());
  check_layout(p.blocks, j.at("blocks"), "picnn");
  return p;
}

inline GeneratorParams generator_from_json(const nlohmann::json& j) {
  expect_type(j, "generator");
  std::mt19937_64 rng(0);
  GeneratorParams p = make_generator(j.at("latent_dim").get<Index>(), j.at("output_dim").get<Index>(),
                                     j.at("widths").get<std::vector<Index>>(),
                                     activation_from_json(j.at("activation")), rng, j.at("context_dim").get<Index>());
  check_layout(p.blocks, j.at("blocks"), "generator");
  return p;
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_blocks(std::ostream& os, const std::vector<ParamBlock>& blocks) {
  for (const auto& b : blocks)
    for (double x : b.value.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      write_u64(os, bits);
    }
}

inline void read_blocks(std::istream& is, std::vector<ParamBlock>& blocks) {
  for (auto& b : blocks) {
    Matrix m(b.value.rows(), b.value.cols());
    for (Index i = 0; i < m.size(); ++i) {
      const std::uint64_t bits = read_u64(is);
      std::memcpy(m.data() + i, &bits, sizeof bits);
    }
    b.value = Tensor(std::move(m));
    if (!b.value.all_finite()) throw CheckpointError("checkpoint block " + b.name + " holds non-finite values");
  }
}

inline constexpr char kMagic[8] = {'N', 'W', 'B', 'C', 'K', 'P', 'T', '1'};

}  // namespace detail

/// Either kind of trained model.
using AnyModel = std::variant<NwbModel, NwbfModel>;

template <class P>
void save_checkpoint(std::ostream& os, const BarycenterModel<P>& model) {
  nlohmann::json header;
  header["mode"] = std::is_same_v<P, PicnnParams> ? "nwbf" : "nwb";
  header["f"] = nlohmann::json::array();
  header["g"] = nlohmann::json::array();
  for (const auto& f : model.f) header["f"].push_back(detail::arch_json(f));
  for (const auto& g : model.g) header["g"].push_back(detail::arch_json(g));
  header["h"] = detail::arch_json(model.h);
  const std::string text = header.dump();
  os.write(detail::kMagic, sizeof detail::kMagic);
  detail::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& f : model.f) detail::write_blocks(os, f.blocks);
  for (const auto& g : model.g) detail::write_blocks(os, g.blocks);
  detail::write_blocks(os, model.h.blocks);
  if (!os) throw CheckpointError("checkpoint write failed");
}

inline AnyModel load_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kMagic, 8) != 0) throw CheckpointError("not a checkpoint file");
  const std::uint64_t len = detail::read_u64(is);
  if (len > (1u << 26)) throw CheckpointError("checkpoint header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }

  auto fill = [&](auto& model, auto parse) {
    try {
      for (const auto& j : header.at("f")) model.f.push_back(parse(j));
      for (const auto& j : header.at("g")) model.g.push_back(parse(j));
      model.h = detail::generator_from_json(header.at("h"));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint header: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint architecture: ") + e.what());
    }
    if (model.f.size() != model.g.size() || model.f.empty()) throw CheckpointError("checkpoint: f/g count mismatch");
    for (auto& f : model.f) detail::read_blocks(is, f.blocks);
    for (auto& g : model.g) detail::read_blocks(is, g.blocks);
    detail::read_blocks(is, model.h.blocks);
    if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint has trailing bytes");
  };

  const std::string mode = header.value("mode", "");
  if (mode == "nwb") {
    NwbModel m;
    fill(m, detail::ficnn_from_json);
    return m;
  }
  if (mode == "nwbf") {
    NwbfModel m;
    fill(m, detail::picnn_from_json);
    return m;
  }
  throw CheckpointError("checkpoint: unknown mode '" + mode + "'");
}

template <class P>
void save_checkpoint(const std::string& path, const BarycenterModel<P>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path);
  save_checkpoint(os, model);
}

inline AnyModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  return load_checkpoint(is);
}

}  // namespace nwb

#pragma once

// Checkpoint file: one line of JSON header, then every tensor as raw
// little-endian float64 in ModelParams::for_each order.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcmatch/encoder.hpp"
#include "dcmatch/io.hpp"

namespace dcmatch {

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
    return r;
  }
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace detail

inline json checkpoint_header(const ModelParams& params, const LabelScheme& scheme) {
  json tensors = json::array();
  params.for_each([&](const std::string& name, const Mat& m, ParamKind) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  return {{"format", "dcmatch-checkpoint"},
          {"format_version", kCheckpointFormatVersion},
          {"config", params.config.to_json()},
          {"num_classes", params.num_classes},
          {"class_names", scheme.class_names},
          {"vocab_hash", detail::hex64(params.vocab_hash)},
          {"tensors", tensors}};
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const LabelScheme& scheme) {
  const std::string header = checkpoint_header(params, scheme).dump();
  io::write_atomically(
      path,
      [&](std::ostream& out) {
        out << header << '\n';
        params.for_each([&](const std::string&, const Mat& m, ParamKind) {
          for (Eigen::Index i = 0; i < m.size(); ++i) {
            const auto bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(m.data()[i]));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
          }
        });
      },
      /*binary=*/true);
}

struct Checkpoint {
  ModelParams params;
  LabelScheme scheme;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("checkpoint " + path.string() + ": missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error("checkpoint " + path.string() + ": malformed header: " + e.what());
  }
  if (header.value("format", "") != "dcmatch-checkpoint") throw Error("checkpoint " + path.string() + ": not a dcmatch checkpoint");
  if (header.value("format_version", 0) != kCheckpointFormatVersion)
    throw Error("checkpoint " + path.string() + ": unsupported format version");

  Checkpoint ck;
  ck.scheme.num_classes = header.at("num_classes").get<int>();
  ck.scheme.class_names = header.at("class_names").get<std::vector<std::string>>();
  ck.scheme.validate();
  ck.params = shaped_params(EncoderConfig::from_json(header.at("config")), ck.scheme.num_classes);
  ck.params.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);

  const auto& tensors = header.at("tensors");
  std::size_t idx = 0;
  ck.params.for_each([&](const std::string& name, Mat& m, ParamKind) {
    if (idx >= tensors.size()) throw Error("checkpoint: missing tensor " + name);
    const auto& t = tensors[idx++];
    if (t.at("name") != name || t.at("rows").get<Eigen::Index>() != m.rows() || t.at("cols").get<Eigen::Index>() != m.cols())
      throw Error("checkpoint: tensor layout mismatch at " + name);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw Error("checkpoint: truncated data in " + name);
      m.data()[i] = std::bit_cast<double>(detail::to_little_endian(bits));
    }
  });
  if (idx != tensors.size()) throw Error("checkpoint: unexpected extra tensors");
  if (in.peek() != std::char_traits<char>::eof()) throw Error("checkpoint: trailing bytes");
  return ck;
}

}  // namespace dcmatch

#include "c2f/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace c2f {

namespace {

constexpr char kMagic[8] = {'C', '2', 'F', 'C', 'K', 'P', 'T', '\x01'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const Vocabulary& vocab, const RunConfig& cfg,
                     const nlohmann::json& extra) {
  nlohmann::json header;
  header["format"] = 1;
  header["vocab_hash"] = hex64(vocab.hash());
  header["config_hash"] = cfg.hash_hex();
  header["config"] = cfg.to_json();
  header["vocab"] = {{"words", vocab.words()}, {"placeholders", vocab.placeholder_count()}};
  header["extra"] = extra;
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  header["params"] = params;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      const auto& v = model.params[i].value;
      for (Eigen::Index k = 0; k < v.size(); ++k) put_f64(out, v.data()[k]);  // column-major
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(path + " is not a checkpoint");
  const std::uint64_t len = get_u64(in);
  if (len > (1ULL << 32)) throw CheckpointError("checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }

  RunConfig cfg;
  cfg.merge(header.at("config"));
  if (cfg.hash_hex() != header.at("config_hash").get<std::string>()) {
    throw CheckpointError("checkpoint config hash mismatch");
  }
  Vocabulary vocab(header.at("vocab").at("words").get<std::vector<std::string>>(),
                   header.at("vocab").at("placeholders").get<int>());
  if (hex64(vocab.hash()) != header.at("vocab_hash").get<std::string>()) {
    throw CheckpointError("checkpoint vocabulary hash mismatch");
  }
  Model model = Model::zeros(ModelShape::from(cfg, vocab.size()));
  const auto& params = header.at("params");
  if (params.size() != model.params.size()) throw CheckpointError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = model.params[i];
    const auto name = params[i].at("name").get<std::string>();
    if (name != p.name || params[i].at("rows").get<Eigen::Index>() != p.value.rows() ||
        params[i].at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw CheckpointError("checkpoint parameter " + name + " does not match the model layout");
    }
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = get_f64(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
  return Checkpoint{std::move(model), std::move(vocab), cfg, header.value("extra", nlohmann::json::object())};
}

}  // namespace c2f

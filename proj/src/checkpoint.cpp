#include "cevae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "cevae/errors.hpp"
#include "cevae/run_config.hpp"

namespace cevae {

namespace {

constexpr char kMagic[4] = {'C', 'E', 'V', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::vector<char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

template <typename U>
U get(const std::vector<char>& in, std::size_t& pos, const std::string& where) {
  if (pos + sizeof(U) > in.size()) throw FormatError(where + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return static_cast<U>(v);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["model"] = model_config_to_json(ckpt.model);
  header["model_kind"] = std::string(to_string(ckpt.kind));
  header["cevae_factor"] = ckpt.cevae_factor;
  header["epoch"] = ckpt.epoch;
  header["seed"] = ckpt.seed;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : ckpt.params) tensors.push_back({{"name", p.name}, {"shape", p.shape}, {"count", p.value.size()}});
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::vector<char> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : ckpt.params)
    for (float v : p.value) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling and rename so a crash never leaves a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  const std::vector<char> in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (in.size() < 16 || std::memcmp(in.data(), kMagic, 4) != 0) throw FormatError(where + ": not a checkpoint");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(in, pos, where);
  if (version != kVersion) throw FormatError(where + ": unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(in, pos, where);
  if (pos + header_len > in.size()) throw FormatError(where + ": truncated header");
  const auto header = nlohmann::json::parse(in.begin() + static_cast<std::ptrdiff_t>(pos),
                                            in.begin() + static_cast<std::ptrdiff_t>(pos + header_len), nullptr, false);
  if (header.is_discarded()) throw FormatError(where + ": header is not valid JSON");
  pos += header_len;

  Checkpoint ckpt;
  try {
    ckpt.model = model_config_from_json(header.at("model"));
    ckpt.kind = parse_model_kind(header.at("model_kind").get<std::string>());
    ckpt.cevae_factor = header.at("cevae_factor").get<double>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& t : header.at("tensors")) {
      ParamTensor<float> p{t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>(), {}};
      const auto count = t.at("count").get<std::size_t>();
      p.value.resize(count);
      for (auto& v : p.value) v = std::bit_cast<float>(get<std::uint32_t>(in, pos, where));
      ckpt.params.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": bad header (" + e.what() + ")");
  } catch (const std::invalid_argument& e) {
    throw FormatError(where + ": " + e.what());
  }
  if (pos != in.size()) throw FormatError(where + ": trailing bytes after tensors");
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  try {
    return Model<float>(ckpt.model, ckpt.params);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint does not match its model config: ") + e.what());
  }
}

}  // namespace cevae

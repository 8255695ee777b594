#include "msnmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "msnmt/errors.hpp"

namespace msnmt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'S', 'N', 'M'};

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::istream& in, const fs::path& path, const char* what) {
  U value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(U))) {
    throw FormatError(path.string() + ": truncated checkpoint while reading " + what);
  }
  return value;
}

std::string get_bytes(std::istream& in, std::size_t n, const fs::path& path, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(path.string() + ": truncated checkpoint while reading " + what);
  }
  return s;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const fs::path& path) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = model.config().to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto layout = parameter_layout(model.config());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(layout.size()));
  for (const auto& [name, shape] : layout) {
    const Tensor<float>& t = model.param(name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = out.str();
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Model<float> load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string magic = get_bytes(in, 4, path, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError(path.string() + ": not a checkpoint");
  const auto version = get<std::uint32_t>(in, path, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = get<std::uint32_t>(in, path, "config length");
  const ModelConfig config = ModelConfig::from_text(get_bytes(in, config_len, path, "config"));
  const auto count = get<std::uint32_t>(in, path, "tensor count");
  std::map<std::string, Tensor<float>> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint16_t>(in, path, "tensor name length");
    std::string name = get_bytes(in, name_len, path, "tensor name");
    const auto rank = get<std::uint8_t>(in, path, "tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint32_t>(in, path, "tensor dims");
    Tensor<float> t(shape);
    if (!t.data.empty() &&
        !in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw FormatError(path.string() + ": truncated payload for tensor '" + name + "'");
    }
    if (!params.emplace(std::move(name), std::move(t)).second) {
      throw FormatError(path.string() + ": duplicate tensor name");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return Model<float>(config, std::move(params));
}

fs::path vocab_path_for(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".vocab";
  return p;
}

void save_checkpoint_bundle(const Model<float>& model, const Vocab& vocab, const fs::path& path) {
  if (vocab.size() != model.config().vocab_size) {
    throw ContractError("vocabulary has " + std::to_string(vocab.size()) + " entries, model expects " +
                        std::to_string(model.config().vocab_size));
  }
  save_checkpoint(model, path);
  vocab.save(vocab_path_for(path));
}

}  // namespace msnmt

#include <array>
#include <cstring>
#include <fstream>

#include "bmgan/nets.hpp"
#include "bmgan/seeds.hpp"
#include "bmgan/volume_io.hpp"

namespace bmgan {
namespace {

std::string leaf_name(const std::string& full) {
  const auto pos = full.rfind('.');
  return pos == std::string::npos ? full : full.substr(pos + 1);
}

constexpr std::array<char, 4> kNetMagic{'B', 'N', 'E', 'T'};
constexpr std::uint8_t kNetVersion = 0x01;

using Kind = VolumeFormatError::Kind;

}  // namespace

void init_module(torch::nn::Module& m, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "init"));
  for (auto& item : m.named_parameters(/*recurse=*/true)) {
    auto& p = item.value();
    const auto leaf = leaf_name(item.key());
    if (leaf == "weight") {
      p.normal_(0.0, 0.02, gen);
    } else if (leaf == "gamma") {
      p.fill_(1.0);
    } else {
      p.zero_();
    }
  }
}

NetParams snapshot(const torch::nn::Module& m, std::uint64_t seed) {
  NetParams out;
  out.seed = seed;
  for (const auto& item : m.named_parameters(/*recurse=*/true)) {
    out.arrays.emplace_back(item.key(), item.value().detach().clone());
  }
  return out;
}

void restore(torch::nn::Module& m, const NetParams& p) {
  torch::NoGradGuard no_grad;
  auto params = m.named_parameters(/*recurse=*/true);
  if (params.size() != p.arrays.size()) {
    throw ShapeError("parameter count mismatch: module has " + std::to_string(params.size()) + ", file has " +
                     std::to_string(p.arrays.size()));
  }
  std::size_t i = 0;
  for (auto& item : params) {
    const auto& [name, value] = p.arrays[i++];
    if (item.key() != name) throw ShapeError("parameter name mismatch: " + item.key() + " vs " + name);
    if (!item.value().sizes().equals(value.sizes())) throw ShapeError("parameter shape mismatch for " + name);
    item.value().copy_(value);
  }
}

std::int64_t NetParams::count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : arrays) n += t.numel();
  return n;
}

bool NetParams::all_finite() const {
  for (const auto& [_, t] : arrays) {
    if (!torch::isfinite(t).all().item<bool>()) return false;
  }
  return true;
}

bool NetParams::bit_equal(const NetParams& other) const {
  if (arrays.size() != other.arrays.size()) return false;
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& [na, a] = arrays[i];
    const auto& [nb, b] = other.arrays[i];
    if (na != nb || !a.sizes().equals(b.sizes()) || a.scalar_type() != b.scalar_type()) return false;
    const auto ac = a.contiguous();
    const auto bc = b.contiguous();
    if (std::memcmp(ac.data_ptr(), bc.data_ptr(), static_cast<std::size_t>(ac.nbytes())) != 0) return false;
  }
  return true;
}

std::uint64_t NetParams::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : arrays) {
    feed(name.data(), name.size());
    for (auto s : t.sizes()) feed(&s, sizeof(s));
    const auto c = t.contiguous();
    feed(c.data_ptr(), static_cast<std::size_t>(c.nbytes()));
  }
  return h;
}

std::shared_ptr<Generator> make_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  auto g = std::make_shared<Generator>(cfg);
  init_module(*g, seed);
  return g;
}

std::shared_ptr<Discriminator> make_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  auto d = std::make_shared<Discriminator>(cfg);
  init_module(*d, seed);
  return d;
}

std::shared_ptr<Encoder> make_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  auto e = std::make_shared<Encoder>(cfg);
  init_module(*e, seed);
  return e;
}

NetParams init_params(const GeneratorConfig& cfg, std::uint64_t seed) { return snapshot(*make_generator(cfg, seed), seed); }
NetParams init_params(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  return snapshot(*make_discriminator(cfg, seed), seed);
}
NetParams init_params(const EncoderConfig& cfg, std::uint64_t seed) { return snapshot(*make_encoder(cfg, seed), seed); }

// ---------------------------------------------------------------------------

void write_net(std::ostream& os, const NetFile& f) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& [name, t] : f.params.arrays) {
    arrays.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"dtype", "f32"}});
  }
  const nlohmann::json header = {{"kind", f.kind},
                                 {"config", f.config},
                                 {"seed", f.params.seed},
                                 {"meta", f.meta},
                                 {"arrays", arrays}};
  const std::string text = header.dump();
  os.write(kNetMagic.data(), 4);
  os.put(static_cast<char>(kNetVersion));
  write_u32_le(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : f.params.arrays) {
    const auto c = t.detach().to(torch::kFloat32).contiguous();
    write_f32_le(os, c.data_ptr<float>(), static_cast<std::size_t>(c.numel()));
  }
  if (!os) throw VolumeFormatError(Kind::io, "write failed");
}

NetFile read_net(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (is.gcount() != 4 || magic != kNetMagic) throw VolumeFormatError(Kind::bad_magic, "not a BNET file");
  const int version = is.get();
  if (version != kNetVersion) {
    throw VolumeFormatError(Kind::unsupported_version, "unsupported BNET version " + std::to_string(version));
  }
  const auto len = read_u32_le(is);
  if (len == 0 || len > (64U << 20)) throw VolumeFormatError(Kind::malformed_header, "implausible header length");
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (static_cast<std::uint32_t>(is.gcount()) != len) {
    throw VolumeFormatError(Kind::malformed_header, "truncated BNET header");
  }
  NetFile f;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> layout;
  try {
    const auto header = nlohmann::json::parse(text);
    f.kind = header.at("kind").get<std::string>();
    f.config = header.at("config");
    f.meta = header.value("meta", nlohmann::json::object());
    f.params.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& a : header.at("arrays")) {
      if (a.at("dtype").get<std::string>() != "f32") throw VolumeFormatError(Kind::malformed_header, "bad dtype");
      layout.emplace_back(a.at("name").get<std::string>(), a.at("shape").get<std::vector<std::int64_t>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw VolumeFormatError(Kind::malformed_header, std::string("bad BNET header: ") + e.what());
  }
  for (const auto& [name, shape] : layout) {
    for (auto s : shape) {
      if (s < 0) throw VolumeFormatError(Kind::invalid_shape, "negative extent in " + name);
    }
    auto t = torch::empty(shape, torch::kFloat32);
    const auto n = static_cast<std::size_t>(t.numel());
    if (read_f32_le(is, t.data_ptr<float>(), n) != n) {
      throw VolumeFormatError(Kind::length_mismatch, "payload truncated in array " + name);
    }
    f.params.arrays.emplace_back(name, std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw VolumeFormatError(Kind::length_mismatch, "trailing bytes after BNET payload");
  }
  return f;
}

void save_net(const NetFile& f, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw VolumeFormatError(Kind::io, "cannot open " + path.string() + " for writing");
  write_net(os, f);
  os.flush();
  if (!os) throw VolumeFormatError(Kind::io, "write failed for " + path.string());
}

NetFile load_net(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw VolumeFormatError(Kind::io, "cannot open " + path.string());
  return read_net(is);
}

}  // namespace bmgan

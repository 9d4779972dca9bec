#include "sketchfill/model.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "sketchfill/image.hpp"
#include "sketchfill/png_io.hpp"

namespace sketchfill {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "SKETCHFILL-CHECKPOINT 1";

KeyValues schedule_key_values(const NoiseSchedule& s) {
  std::ostringstream bs, be;
  bs.precision(17);
  be.precision(17);
  bs << s.beta_start;
  be << s.beta_end;
  return {{"kind", to_string(s.kind)}, {"T", std::to_string(s.T)}, {"beta_start", bs.str()}, {"beta_end", be.str()}};
}

std::vector<std::pair<std::string, torch::Tensor>> collect(const Model& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : m.unet->named_parameters()) out.emplace_back("denoiser/" + p.key(), p.value());
  for (const auto& p : m.encoder->named_parameters()) out.emplace_back("encoder/" + p.key(), p.value());
  for (const auto& [k, v] : m.codec->named_parameters()) out.emplace_back("codec/" + k, v);
  return out;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ContractError("checkpoint: truncated tensor blob");
  return v;
}

}  // namespace

NoiseSchedule schedule_from_config(const RunConfig& c) {
  return make_schedule(c.timesteps, c.beta_start, c.beta_end, parse_schedule_kind(c.schedule));
}

Model Model::create(const RunConfig& config, bool sketch_channel, uint64_t init_seed) {
  config.validate();
  Model m;
  m.config = config;
  m.schedule = schedule_from_config(config);
  torch::manual_seed(init_seed);
  m.codec = make_codec(config.codec, config.codec_latent_channels, derive_seed(init_seed, 3));
  m.unet = UNet(UNetSpec::from_config(config, sketch_channel));
  m.encoder = ReferenceEncoder(EncoderSpec::from_config(config));
  m.set_training(false);
  return m;
}

void Model::set_training(bool on) {
  unet->train(on);
  encoder->train(on);
}

void Model::to(torch::ScalarType dtype) {
  unet->to(dtype);
  encoder->to(dtype);
}

void save_checkpoint(const fs::path& path, const Model& model) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    auto section = [&](const char* name, const KeyValues& kv) {
      out << '[' << name << "]\n" << format_key_values(kv);
    };
    out << kMagic << '\n';
    section("config", model.config.to_key_values());
    section("schedule", schedule_key_values(model.schedule));
    section("unet", model.unet->spec().to_key_values());
    section("encoder", model.encoder->spec().to_key_values());
    section("codec", {{"name", model.codec->name()},
                      {"spatial_factor", std::to_string(model.codec->spatial_factor())},
                      {"latent_channels", std::to_string(model.codec->latent_channels())}});
    const auto tensors = collect(model);
    out << "[tensors]\ncount = " << tensors.size() << "\nEND\n";
    for (const auto& [name, t] : tensors) {
      auto data = t.detach().to(torch::kFloat).contiguous();
      put<uint32_t>(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<uint32_t>(out, static_cast<uint32_t>(data.dim()));
      for (int64_t d : data.sizes()) put<int64_t>(out, d);
      out.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
                static_cast<std::streamsize>(data.numel() * sizeof(float)));
    }
    if (!out) throw IoError("short write on checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Model load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMagic) throw ContractError("checkpoint: bad header in " + path.string());

  std::map<std::string, KeyValues> sections;
  std::string current;
  std::string body;
  auto flush = [&] {
    if (!current.empty()) sections[current] = parse_key_values(body);
    body.clear();
  };
  while (std::getline(in, line)) {
    if (line == "END") break;
    if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
      flush();
      current = line.substr(1, line.size() - 2);
    } else {
      body += line + '\n';
    }
  }
  flush();
  for (const char* s : {"config", "schedule", "unet", "encoder", "codec", "tensors"}) {
    if (!sections.count(s)) throw ContractError(std::string("checkpoint: missing section ") + s);
  }

  Model m;
  m.config = RunConfig::from_key_values(sections["config"]);
  const auto& sk = sections["schedule"];
  m.schedule = make_schedule(std::stoi(sk.at("T")), std::stod(sk.at("beta_start")), std::stod(sk.at("beta_end")),
                             parse_schedule_kind(sk.at("kind")));
  const UNetSpec uspec = UNetSpec::from_key_values(sections["unet"]);
  const EncoderSpec espec = EncoderSpec::from_key_values(sections["encoder"]);
  if (uspec != UNetSpec::from_config(m.config, uspec.sketch_channel)) {
    throw ContractError("checkpoint: denoiser descriptor disagrees with run config");
  }
  if (espec != EncoderSpec::from_config(m.config)) {
    throw ContractError("checkpoint: encoder descriptor disagrees with run config");
  }
  m.codec = make_codec(sections["codec"].at("name"), std::stoi(sections["codec"].at("latent_channels")));
  if (m.codec->latent_channels() != uspec.latent_channels) {
    throw ContractError("checkpoint: codec latent channels disagree with denoiser");
  }
  m.unet = UNet(uspec);
  m.encoder = ReferenceEncoder(espec);

  auto expected = collect(m);
  const size_t count = std::stoul(sections["tensors"].at("count"));
  if (count != expected.size()) throw ContractError("checkpoint: tensor count does not match descriptor");
  torch::NoGradGuard no_grad;
  for (auto& [name, target] : expected) {
    const auto len = take<uint32_t>(in);
    std::string stored(len, '\0');
    in.read(stored.data(), len);
    if (stored != name) throw ContractError("checkpoint: expected tensor " + name + ", found " + stored);
    const auto ndim = take<uint32_t>(in);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = take<int64_t>(in);
    if (!target.sizes().equals(dims)) throw ContractError("checkpoint: shape mismatch for " + name);
    auto buf = torch::empty(dims, torch::kFloat);
    in.read(reinterpret_cast<char*>(buf.data_ptr<float>()), static_cast<std::streamsize>(buf.numel() * sizeof(float)));
    if (!in) throw ContractError("checkpoint: truncated data for " + name);
    target.copy_(buf);
  }
  m.set_training(false);
  return m;
}

Model load_checkpoint(const fs::path& path, const UNetSpec& expected) {
  Model m = load_checkpoint(path);
  if (!(m.unet->spec() == expected)) {
    throw ContractError("checkpoint: stored architecture does not match the requested one");
  }
  return m;
}

std::string sha256_hex(std::span<const uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string checkpoint_id(const fs::path& path) { return sha256_hex(read_file(path)).substr(0, 16); }

}  // namespace sketchfill

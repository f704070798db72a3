#include "outpaint/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "outpaint/errors.hpp"

namespace outpaint::checkpoint {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

ordered_json write_blob(const fs::path& file, const ParamSet& params) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  ordered_json entries = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params.items()) {
    const Tensor& t = p.var.value();
    std::vector<float> buf(t.numel());
    for (std::size_t k = 0; k < t.numel(); ++k) buf[k] = static_cast<float>(t[k]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    entries.push_back({{"name", p.name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}});
    offset += buf.size() * sizeof(float);
  }
  if (!out) throw IoError("short write to " + file.string());
  return entries;
}

ParamSet read_blob(const fs::path& file, const ordered_json& entries) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ParamSet params;
  for (const auto& e : entries) {
    if (e.at("dtype") != "f32") throw IoError("unsupported dtype " + e.at("dtype").dump());
    const Shape shape = e.at("shape").get<Shape>();
    const std::size_t count = shape_numel(shape);
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    if (offset + count * sizeof(float) > bytes.size())
      throw IoError("tensor " + e.at("name").get<std::string>() + " runs past end of blob");
    std::vector<float> buf(count);
    std::memcpy(buf.data(), bytes.data() + offset, count * sizeof(float));
    std::vector<double> data(buf.begin(), buf.end());
    params.add(e.at("name").get<std::string>(), Tensor(shape, std::move(data)));
  }
  return params;
}

ordered_json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw IoError("missing checkpoint manifest in " + dir.string());
  try {
    return ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

ordered_json discriminator_config_json(const DiscriminatorConfig& c) {
  return {{"image_h", c.image_h},       {"image_w", c.image_w},
          {"from_rgb", c.from_rgb},     {"channels", c.channels},
          {"hidden", c.hidden},         {"categorical", c.categorical},
          {"num_classes", c.num_classes}, {"grid_n", c.grid_n}};
}

}  // namespace

void round_to_f32(ParamSet& params) {
  for (const auto& p : params.items()) {
    ad::Var v = p.var;
    for (auto& x : v.mutable_value().vec()) x = static_cast<double>(static_cast<float>(x));
  }
}

void save(const fs::path& dir, const Generator& generator, const Discriminator* discriminator) {
  fs::create_directories(dir);
  const auto& c = generator.config();
  ordered_json m;
  m["format"] = "outpaint-checkpoint";
  m["version"] = 1;
  m["dtype"] = "f32";
  m["mode"] = c.categorical ? "categorical" : "non-categorical";
  m["d_z"] = c.z_dim;
  m["d_w"] = c.w_dim;
  m["K"] = c.num_classes;
  m["grid"] = {{"n", c.grid.n}, {"patch_h", c.grid.patch_h}, {"patch_w", c.grid.patch_w}};
  m["architecture"] = {{"mapping_layers", c.mapping_layers},
                       {"mapping_lr_mul", c.mapping_lr_mul},
                       {"base_resolution", c.base_resolution},
                       {"channels", c.channels}};
  m["class_names"] = c.class_names;
  m["blob"] = kGeneratorBlob;
  m["tensors"] = write_blob(dir / kGeneratorBlob, generator.params());
  if (discriminator) {
    m["discriminator"] = {{"blob", kDiscriminatorBlob},
                          {"config", discriminator_config_json(discriminator->config())},
                          {"tensors", write_blob(dir / kDiscriminatorBlob, discriminator->params())}};
  }
  std::ofstream out(dir / kManifest, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

GeneratorConfig load_generator_config(const fs::path& dir) {
  const ordered_json m = read_manifest(dir);
  try {
    GeneratorConfig c;
    c.categorical = m.at("mode") == "categorical";
    c.z_dim = m.at("d_z");
    c.w_dim = m.at("d_w");
    c.num_classes = m.at("K");
    c.grid = {m.at("grid").at("n"), m.at("grid").at("patch_h"), m.at("grid").at("patch_w")};
    const auto& a = m.at("architecture");
    c.mapping_layers = a.at("mapping_layers");
    c.mapping_lr_mul = a.at("mapping_lr_mul");
    c.base_resolution = a.at("base_resolution");
    c.channels = a.at("channels").get<std::vector<int>>();
    c.class_names = m.value("class_names", std::vector<std::string>{});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("incomplete checkpoint manifest: ") + e.what());
  }
}

Generator load_generator(const fs::path& dir) {
  GeneratorConfig config = load_generator_config(dir);
  const ordered_json m = read_manifest(dir);
  ParamSet params = read_blob(dir / m.value("blob", std::string(kGeneratorBlob)), m.at("tensors"));
  return Generator(std::move(config), std::move(params));
}

std::optional<Discriminator> load_discriminator(const fs::path& dir) {
  const ordered_json m = read_manifest(dir);
  if (!m.contains("discriminator")) return std::nullopt;
  const auto& d = m.at("discriminator");
  const auto& j = d.at("config");
  DiscriminatorConfig c;
  c.image_h = j.at("image_h");
  c.image_w = j.at("image_w");
  c.from_rgb = j.at("from_rgb");
  c.channels = j.at("channels").get<std::vector<int>>();
  c.hidden = j.at("hidden");
  c.categorical = j.at("categorical");
  c.num_classes = j.at("num_classes");
  c.grid_n = j.at("grid_n");
  ParamSet params = read_blob(dir / d.at("blob").get<std::string>(), d.at("tensors"));
  return Discriminator(std::move(c), std::move(params));
}

}  // namespace outpaint::checkpoint

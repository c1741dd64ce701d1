#include "hcn/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "hcn/errors.hpp"

namespace hcn::dataio {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

// ---- images ---------------------------------------------------------------------

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(const std::string& data, std::size_t& pos, const std::string& what) {
  while (pos < data.size()) {
    if (std::isspace(static_cast<unsigned char>(data[pos]))) {
      ++pos;
    } else if (data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  if (start == pos) throw IoError(what + ": truncated header");
  return data.substr(start, pos - start);
}

std::size_t header_number(const std::string& tok, const std::string& what) {
  std::size_t v = 0;
  const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (r.ec != std::errc() || r.ptr != tok.data() + tok.size() || v == 0)
    throw IoError(what + ": bad header value '" + tok + "'");
  return v;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

TensorF read_pgm(const fs::path& path) {
  const std::string what = "pgm '" + path.string() + "'";
  const std::string data = read_file(path);
  std::size_t pos = 0;
  if (pnm_token(data, pos, what) != "P5") throw IoError(what + ": not a binary PGM (P5)");
  const std::size_t w = header_number(pnm_token(data, pos, what), what);
  const std::size_t h = header_number(pnm_token(data, pos, what), what);
  const std::size_t maxval = header_number(pnm_token(data, pos, what), what);
  if (maxval > 255) throw IoError(what + ": only 8-bit PGM is supported");
  ++pos;  // single whitespace byte before the raster
  if (data.size() < pos + w * h) throw IoError(what + ": truncated raster");
  TensorF img({h, w, 1});
  for (std::size_t i = 0; i < w * h; ++i)
    img[i] = static_cast<float>(static_cast<unsigned char>(data[pos + i])) / static_cast<float>(maxval);
  return img;
}

void write_pgm(const fs::path& path, const TensorF& image) {
  if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("write_pgm: expected H x W x 1");
  std::string out = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  for (float v : image.data()) out.push_back(static_cast<char>(to_byte(v)));
  write_file(path, out);
}

void write_ppm(const fs::path& path, const explain::RgbImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  write_file(path, out);
}

TensorF resize_image(const TensorF& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("resize_image: expected H x W x 1");
  if (image.dim(0) == height && image.dim(1) == width) return image;
  TensorD src({image.dim(0), image.dim(1)});
  for (std::size_t i = 0; i < image.size(); ++i) src[i] = image[i];
  const TensorD r = explain::resize_bilinear(src, height, width);
  TensorF out({height, width, 1});
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = static_cast<float>(r[i]);
  return out;
}

std::size_t coerce_height(std::size_t height) { return std::max<std::size_t>(3, height - height % 3); }

// ---- manifest -------------------------------------------------------------------

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw ContractError("unknown split '" + text + "' (expected train, val or test)");
}

std::vector<const ManifestRecord*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

std::vector<std::string> default_class_names() { return ecoc::default_class_names(3); }

namespace {

std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

}  // namespace

DatasetManifest parse_manifest(const std::string& csv, const fs::path& base_dir, std::vector<std::string> class_names,
                               bool check_files) {
  DatasetManifest m;
  m.class_names = std::move(class_names);
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw ContractError("manifest: missing header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,split") throw ContractError("manifest: header must be 'path,label,split', got '" + line + "'");
  std::map<std::string, std::size_t> seen;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv_fields(line);
    const std::string where = "manifest line " + std::to_string(lineno);
    if (f.size() != 3) throw ContractError(where + ": expected 3 fields, found " + std::to_string(f.size()));
    const auto it = std::find(m.class_names.begin(), m.class_names.end(), f[1]);
    if (it == m.class_names.end()) throw ContractError(where + ": unknown class '" + f[1] + "'");
    Split split;
    try {
      split = parse_split(f[2]);
    } catch (const ContractError& e) {
      throw ContractError(where + ": " + e.what());
    }
    fs::path p = f[0];
    if (p.is_relative()) p = base_dir / p;
    const std::string key = p.lexically_normal().string();
    if (auto s = seen.find(key); s != seen.end())
      throw ContractError(where + ": path '" + f[0] + "' already listed on line " + std::to_string(s->second));
    seen[key] = lineno;
    if (check_files && !fs::exists(p)) throw IoError(where + ": file '" + p.string() + "' does not exist");
    m.records.push_back({p, f[1], static_cast<std::size_t>(it - m.class_names.begin()), split, lineno});
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path, std::vector<std::string> class_names) {
  return parse_manifest(read_file(path), path.parent_path(), std::move(class_names));
}

std::vector<fusion::Sample> load_split(const DatasetManifest& m, Split s, std::size_t height, std::size_t width) {
  const std::size_t h = coerce_height(height);
  std::vector<fusion::Sample> out;
  for (const auto* r : m.split(s)) {
    TensorF img = resize_image(read_pgm(r->path), h, width);
    out.push_back({std::move(img), r->label_index, r->path.filename().string()});
  }
  return out;
}

// ---- synthetic corpus -----------------------------------------------------------

void SyntheticSpec::validate() const {
  if (classes < 2) throw ContractError("synth: need at least 2 classes");
  if (size < classes || size % 3 != 0) throw ContractError("synth: image size must be divisible by 3");
  if (size % classes != 0) throw ContractError("synth: image size must be divisible by the class count");
  for (const auto* counts : {&train_counts, &val_counts, &test_counts})
    if (counts->size() != classes) throw ContractError("synth: per-class counts must list every class");
  for (auto c : train_counts)
    if (c < 1) throw ContractError("synth: every class needs at least one training image");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ContractError("synth: sigma must be >= 0");
}

std::pair<std::size_t, std::size_t> region_rows(std::size_t klass, std::size_t classes, std::size_t size) {
  const std::size_t h = size / classes;
  return {klass * h, (klass + 1) * h};
}

std::pair<std::size_t, std::size_t> band_rows(std::size_t klass, std::size_t classes, std::size_t size) {
  const auto [begin, end] = region_rows(klass, classes, size);
  const std::size_t h = end - begin;
  const std::size_t band = std::max<std::size_t>(1, h / 2);
  const std::size_t start = begin + (h - band) / 2;
  return {start, start + band};
}

TensorF band_template(std::size_t klass, std::size_t classes, std::size_t size) {
  TensorF t({size, size, 1}, static_cast<float>(kBackground));
  const auto [b, e] = band_rows(klass, classes, size);
  for (std::size_t i = b; i < e; ++i)
    for (std::size_t j = 0; j < size; ++j) t.at(i, j, 0) = static_cast<float>(kBand);
  return t;
}

fusion::Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  fusion::Dataset d;
  d.class_names = ecoc::default_class_names(spec.classes);
  const std::pair<Split, const std::vector<std::size_t>*> splits[] = {
      {Split::Train, &spec.train_counts}, {Split::Val, &spec.val_counts}, {Split::Test, &spec.test_counts}};
  std::uint64_t stream = 0;
  for (const auto& [split, counts] : splits) {
    auto& dest = split == Split::Train ? d.train : split == Split::Val ? d.val : d.test;
    for (std::size_t k = 0; k < spec.classes; ++k) {
      const TensorF tmpl = band_template(k, spec.classes, spec.size);
      Rng rng = derive_rng(spec.seed, 1000 * (stream++) + k);
      std::normal_distribution<double> noise(0.0, 1.0);
      for (std::size_t n = 0; n < (*counts)[k]; ++n) {
        TensorF img(tmpl.shape());
        for (std::size_t i = 0; i < img.size(); ++i) {
          const double v = tmpl[i] + spec.sigma * noise(rng);
          img[i] = static_cast<float>(to_byte(v)) / 255.0f;
        }
        std::ostringstream id;
        id << split_name(split) << '_' << k << '_' << std::setw(4) << std::setfill('0') << n << ".pgm";
        dest.push_back({std::move(img), k, id.str()});
      }
    }
  }
  return d;
}

fs::path write_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  const auto d = make_synthetic(spec);
  std::ostringstream manifest;
  manifest << "path,label,split\n";
  const std::pair<Split, const std::vector<fusion::Sample>*> splits[] = {
      {Split::Train, &d.train}, {Split::Val, &d.val}, {Split::Test, &d.test}};
  for (const auto& [split, samples] : splits)
    for (const auto& s : *samples) {
      write_pgm(out_dir / "images" / s.id, s.image);
      manifest << csv_quote("images/" + s.id) << ',' << csv_quote(d.class_names[s.label]) << ','
               << split_name(split) << '\n';
    }
  const fs::path mpath = out_dir / "manifest.csv";
  write_file(mpath, manifest.str());
  return mpath;
}

// ---- configuration --------------------------------------------------------------

namespace {

struct KeyHandler {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> apply;
  std::function<std::string(const RunConfig&)> show;
};

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  std::string t = text;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size())
    throw ContractError("config: key '" + key + "' has invalid value '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ContractError("config: key '" + key + "' expects a boolean, got '" + text + "'");
}

std::vector<std::size_t> parse_counts(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ',')) {
    part.erase(0, part.find_first_not_of(" \t"));
    part.erase(part.find_last_not_of(" \t") + 1);
    out.push_back(parse_number<std::size_t>(key, part));
  }
  if (out.empty()) throw ContractError("config: key '" + key + "' needs a comma-separated list");
  return out;
}

std::string show_counts(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string show_double(double v) {
  char buf[64];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

std::string decay_name(backbone::DecayMode m) {
  switch (m) {
    case backbone::DecayMode::Exponential: return "exp";
    case backbone::DecayMode::Multiplicative: return "mult";
    case backbone::DecayMode::Factor: return "factor";
  }
  return "exp";
}

#define HCN_DOUBLE(sec, name, field) \
  {sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(name, v); }, \
   [](const RunConfig& c) { return show_double(c.field); }}
#define HCN_SIZE(sec, name, field) \
  {sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_number<std::size_t>(name, v); }, \
   [](const RunConfig& c) { return std::to_string(c.field); }}
#define HCN_INT(sec, name, field) \
  {sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(name, v); }, \
   [](const RunConfig& c) { return std::to_string(c.field); }}
#define HCN_U64(sec, name, field) \
  {sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_number<std::uint64_t>(name, v); }, \
   [](const RunConfig& c) { return std::to_string(c.field); }}
#define HCN_BOOL(sec, name, field) \
  {sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }, \
   [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}
#define HCN_COUNTS(sec, name, field) \
  {sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_counts(name, v); }, \
   [](const RunConfig& c) { return show_counts(c.field); }}

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> h = {
      HCN_DOUBLE("train", "lr", hcn.train.learning_rate),
      HCN_SIZE("train", "batch", hcn.train.batch_size),
      HCN_SIZE("train", "epochs", hcn.train.epochs),
      HCN_DOUBLE("train", "decay_rate", hcn.train.decay_rate),
      HCN_SIZE("train", "decay_every", hcn.train.decay_every),
      {"train", "decay_mode",
       [](RunConfig& c, const std::string& v) {
         if (v == "exp") c.hcn.train.decay_mode = backbone::DecayMode::Exponential;
         else if (v == "mult") c.hcn.train.decay_mode = backbone::DecayMode::Multiplicative;
         else if (v == "factor") c.hcn.train.decay_mode = backbone::DecayMode::Factor;
         else throw ContractError("config: key 'decay_mode' expects exp, mult or factor, got '" + v + "'");
       },
       [](const RunConfig& c) { return decay_name(c.hcn.train.decay_mode); }},
      HCN_BOOL("train", "bootstrap", hcn.train.bootstrap),
      HCN_SIZE("train", "augment_copies", hcn.augment_copies),
      HCN_DOUBLE("train", "rotation", hcn.train.augment.rotation_deg),
      HCN_DOUBLE("train", "translate", hcn.train.augment.translate),
      HCN_DOUBLE("train", "flip", hcn.train.augment.flip_probability),
      HCN_DOUBLE("train", "zoom_min", hcn.train.augment.zoom_min),
      HCN_DOUBLE("train", "zoom_max", hcn.train.augment.zoom_max),
      HCN_DOUBLE("train", "beta1", hcn.train.adam.beta1),
      HCN_DOUBLE("train", "beta2", hcn.train.adam.beta2),
      HCN_DOUBLE("train", "adam_eps", hcn.train.adam.eps),
      HCN_U64("train", "seed", hcn.seed),
      {"model", "strategy", [](RunConfig& c, const std::string& v) { c.hcn.strategy = fusion::parse_strategy(v); },
       [](const RunConfig& c) { return fusion::strategy_name(c.hcn.strategy); }},
      HCN_BOOL("model", "ecoc", hcn.use_ecoc),
      HCN_BOOL("model", "optimize_codes", hcn.optimize_codes),
      HCN_SIZE("model", "stem_out", hcn.stem_out),
      HCN_SIZE("model", "stem_channels", hcn.stem_channels),
      HCN_SIZE("model", "backbone_convs", hcn.backbone_convs),
      HCN_SIZE("model", "backbone_width", hcn.backbone_width),
      HCN_SIZE("model", "image_height", image_height),
      HCN_SIZE("model", "image_width", image_width),
      HCN_DOUBLE("jcl", "delta", hcn.jcl.delta),
      HCN_DOUBLE("jcl", "lambda", hcn.jcl.lambda),
      HCN_DOUBLE("jcl", "xi", hcn.jcl.xi),
      HCN_INT("jcl", "tau", hcn.jcl.tau),
      HCN_SIZE("jcl", "max_alternations", hcn.jcl.max_alternations),
      HCN_DOUBLE("jcl", "tolerance", hcn.jcl.tolerance),
      HCN_SIZE("jcl", "fit_iterations", hcn.jcl.fit_iterations),
      HCN_DOUBLE("meta", "l2", hcn.meta.l2),
      HCN_DOUBLE("meta", "step", hcn.meta.step),
      HCN_SIZE("meta", "max_iterations", hcn.meta.max_iterations),
      HCN_SIZE("synth", "classes", synth.classes),
      HCN_COUNTS("synth", "train_counts", synth.train_counts),
      HCN_COUNTS("synth", "val_counts", synth.val_counts),
      HCN_COUNTS("synth", "test_counts", synth.test_counts),
      HCN_SIZE("synth", "size", synth.size),
      HCN_DOUBLE("synth", "sigma", synth.sigma),
      HCN_U64("synth", "seed", synth.seed),
  };
  return h;
}

#undef HCN_DOUBLE
#undef HCN_SIZE
#undef HCN_INT
#undef HCN_U64
#undef HCN_BOOL
#undef HCN_COUNTS

}  // namespace

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ContractError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  RunConfig cfg;
  auto apply = [&](const std::string& section, const std::string& key, const std::string& value) {
    const KeyHandler* found = nullptr;
    for (const auto& h : handlers()) {
      if (h.key != key || (!section.empty() && h.section != section)) continue;
      if (found) throw ContractError("config: key '" + key + "' is ambiguous outside a section");
      found = &h;
    }
    if (!found)
      throw ContractError("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
    found->apply(cfg, value);
  };
  static const std::set<std::string> sections{"train", "model", "jcl", "meta", "synth"};
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      apply("", name, node.data());
      continue;
    }
    if (!sections.count(name)) throw ContractError("config: unknown section '[" + name + "]'");
    for (const auto& [key, leaf] : node) apply(name, key, leaf.data());
  }
  cfg.hcn.validate();
  cfg.synth.validate();
  if (cfg.image_height == 0 || cfg.image_width == 0) throw ContractError("config: image size must be positive");
  return cfg;
}

RunConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

std::vector<std::string> config_keys() {
  RunConfig defaults;
  std::vector<std::string> out;
  for (const auto& h : handlers()) out.push_back(h.section + "." + h.key + " = " + h.show(defaults));
  return out;
}

// ---- model archive --------------------------------------------------------------

namespace {

using json = nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;
  std::size_t end = 0;

  void need(std::size_t n) const {
    if (pos + n > end) throw IoError("model archive: unexpected end of data");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
    return v;
  }
};

std::uint32_t checksum(const std::string& data, std::size_t len) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(len)));
}

// Every float tensor of the model in archive order.
void visit_tensors(fusion::HcnModel& m, const std::function<void(TensorF&)>& f) {
  f(m.extractor.front.conv.filters);
  f(m.extractor.front.conv.bias);
  for (auto& stem : m.extractor.stems)
    for (auto& c : stem.convs) {
      f(c.filters);
      f(c.bias);
    }
  for (auto& c : m.extractor.fusion) {
    f(c.filters);
    f(c.bias);
  }
  for (auto& col : m.columns) {
    for (auto& s : col.streams) {
      for (auto& b : s.blocks) {
        f(b.conv.filters);
        f(b.conv.bias);
        f(b.bn.gamma);
        f(b.bn.beta);
        f(b.bn.running_mean);
        f(b.bn.running_var);
      }
      f(s.head_weight);
      f(s.head_bias);
    }
    if (col.meta) {
      f(col.meta->weight);
      f(col.meta->bias);
    }
  }
}

}  // namespace

std::string serialize_model(const fusion::HcnModel& model) {
  model.validate();
  json meta;
  meta["strategy"] = fusion::strategy_name(model.strategy);
  meta["use_ecoc"] = model.use_ecoc;
  meta["bootstrap"] = model.bootstrap;
  meta["class_names"] = model.class_names;
  meta["seed"] = model.seed;
  meta["epochs"] = model.epochs;
  meta["image_height"] = model.extractor.image_height;
  meta["image_width"] = model.extractor.image_width;
  json stems = json::array();
  for (const auto& s : model.extractor.stems) stems.push_back(s.spec.describe());
  meta["stems"] = stems;
  meta["codes"] = model.use_ecoc ? model.codes.to_text() : std::string();
  json cols = json::array();
  for (const auto& c : model.columns) {
    json col;
    json streams = json::array();
    for (const auto& s : c.streams)
      streams.push_back({{"spec", s.spec.describe()},
                         {"epochs_completed", s.epochs_completed},
                         {"final_lr", s.final_lr},
                         {"seed", s.seed}});
    col["streams"] = streams;
    json w = json::array();
    for (float x : c.dwa_weights) w.push_back(std::bit_cast<std::uint32_t>(x));
    col["dwa_weights_bits"] = w;
    col["meta"] = c.meta ? json{{"inputs", c.meta->inputs()}, {"classes", c.meta->classes()}} : json();
    cols.push_back(col);
  }
  meta["columns"] = cols;
  const std::string meta_text = meta.dump();

  std::string out = "HCN1";
  put_u32(out, kArchiveVersion);
  put_u64(out, meta_text.size());
  out += meta_text;
  std::vector<const TensorF*> tensors;
  visit_tensors(const_cast<fusion::HcnModel&>(model), [&](TensorF& t) { tensors.push_back(&t); });
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put_u64(out, d);
    for (float v : t->data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  put_u32(out, checksum(out, out.size()));
  return out;
}

fusion::HcnModel deserialize_model(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "HCN1") != 0) throw IoError("model archive: bad magic (not an HCN1 file)");
  Reader head{bytes, 4, bytes.size()};
  const std::uint32_t version = head.u32();
  if (version != kArchiveVersion)
    throw IoError("model archive: version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kArchiveVersion) + ")");
  if (bytes.size() < 12) throw IoError("model archive: checksum mismatch (file truncated)");
  const std::size_t body = bytes.size() - 4;
  Reader tail{bytes, body, bytes.size()};
  if (tail.u32() != checksum(bytes, body)) throw IoError("model archive: checksum mismatch (truncated or corrupt file)");

  Reader r{bytes, 8, body};
  const std::uint64_t meta_len = r.u64();
  r.need(meta_len);
  json meta;
  try {
    meta = json::parse(bytes.substr(r.pos, meta_len));
  } catch (const json::exception& e) {
    throw IoError(std::string("model archive: bad metadata: ") + e.what());
  }
  r.pos += meta_len;

  fusion::HcnModel m;
  try {
    m.strategy = fusion::parse_strategy(meta.at("strategy").get<std::string>());
    m.use_ecoc = meta.at("use_ecoc").get<bool>();
    m.bootstrap = meta.at("bootstrap").get<bool>();
    m.class_names = meta.at("class_names").get<std::vector<std::string>>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.epochs = meta.at("epochs").get<std::size_t>();
    std::array<features::StemSpec, features::kStems> specs;
    const auto& stems = meta.at("stems");
    if (stems.size() != features::kStems) throw IoError("model archive: expected 4 stems");
    for (std::size_t k = 0; k < features::kStems; ++k) specs[k] = features::StemSpec::parse(stems[k].get<std::string>());
    m.extractor = features::FeatureExtractor<float>::create(meta.at("image_height").get<std::size_t>(),
                                                            meta.at("image_width").get<std::size_t>(), specs, 0);
    if (m.use_ecoc) m.codes = ecoc::CodingMatrix::from_text(meta.at("codes").get<std::string>());
    for (const auto& c : meta.at("columns")) {
      fusion::ColumnModel col;
      for (const auto& s : c.at("streams")) {
        auto net = backbone::BackboneModel<float>::create(backbone::BackboneSpec::parse(s.at("spec").get<std::string>()),
                                                          s.at("seed").get<std::uint64_t>());
        net.epochs_completed = s.at("epochs_completed").get<std::size_t>();
        net.final_lr = s.at("final_lr").get<double>();
        col.streams.push_back(std::move(net));
      }
      for (const auto& w : c.at("dwa_weights_bits")) col.dwa_weights.push_back(std::bit_cast<float>(w.get<std::uint32_t>()));
      if (!c.at("meta").is_null()) {
        const auto in = c.at("meta").at("inputs").get<std::size_t>(), k = c.at("meta").at("classes").get<std::size_t>();
        col.meta = fusion::MetaModel{TensorF({in, k}), TensorF({k})};
      }
      m.columns.push_back(std::move(col));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("model archive: bad metadata: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  std::uint32_t seen = 0;
  visit_tensors(m, [&](TensorF& t) {
    if (++seen > count) throw IoError("model archive: fewer tensors than the model needs");
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64());
    if (shape != t.shape())
      throw IoError("model archive: tensor " + std::to_string(seen - 1) + " has shape " + shape_string(shape) +
                    ", expected " + shape_string(t.shape()));
    for (auto& v : t.data()) v = std::bit_cast<float>(r.u32());
  });
  if (seen != count || r.pos != body) throw IoError("model archive: tensor count mismatch");
  m.validate();
  return m;
}

void save_model(const fusion::HcnModel& m, const fs::path& path) { write_file(path, serialize_model(m)); }

fusion::HcnModel load_model(const fs::path& path) { return deserialize_model(read_file(path)); }

// ---- triage ---------------------------------------------------------------------

std::string triage_route(const std::string& class_name) {
  if (class_name == "Viral Pneumonia") return "refer: RT-PCR/CT confirmation + isolate";
  if (class_name == "Bacterial Pneumonia") return "treat: antibacterial pathway, spare RT-PCR";
  if (class_name == "Normal") return "discharge/other diagnostics";
  return "unrouted";
}

}  // namespace hcn::dataio

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcn/explain.hpp"
#include "hcn/fusion.hpp"

namespace hcn::dataio {

namespace fs = std::filesystem;

// ---- images ---------------------------------------------------------------------

// Binary 8-bit PGM (P5) to an H x W x 1 tensor in [0, 1].
TensorF read_pgm(const fs::path& path);
void write_pgm(const fs::path& path, const TensorF& image);
void write_ppm(const fs::path& path, const explain::RgbImage& image);

// Bilinear resize of an H x W x 1 image.
TensorF resize_image(const TensorF& image, std::size_t height, std::size_t width);

// Largest multiple of 3 not above `height` (at least 3).
std::size_t coerce_height(std::size_t height);

// ---- manifest -------------------------------------------------------------------

enum class Split { Train, Val, Test };
std::string split_name(Split s);
Split parse_split(const std::string& text);

struct ManifestRecord {
  fs::path path;  // resolved against the manifest's directory
  std::string label;
  std::size_t label_index = 0;
  Split split = Split::Train;
  std::size_t line = 0;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(Split s) const;
};

std::vector<std::string> default_class_names();

// CSV with header path,label,split. Checks labels, splits, duplicate paths
// and that every referenced file exists.
DatasetManifest load_manifest(const fs::path& path, std::vector<std::string> class_names = default_class_names());
DatasetManifest parse_manifest(const std::string& csv, const fs::path& base_dir,
                               std::vector<std::string> class_names = default_class_names(),
                               bool check_files = true);

// Loads, converts and resizes the images of one split (height forced to a multiple of 3).
std::vector<fusion::Sample> load_split(const DatasetManifest& m, Split s, std::size_t height, std::size_t width);

// ---- synthetic corpus -----------------------------------------------------------

struct SyntheticSpec {
  std::size_t classes = 3;
  std::vector<std::size_t> train_counts{80, 110, 5};
  std::vector<std::size_t> val_counts{10, 10, 10};
  std::vector<std::size_t> test_counts{20, 20, 20};
  std::size_t size = 24;
  double sigma = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

inline constexpr double kBackground = 51.0 / 255.0;
inline constexpr double kBand = 204.0 / 255.0;

// Noise-free template of class k: a bright horizontal band in the middle of
// the k-th of `classes` equal horizontal bands of the image.
TensorF band_template(std::size_t klass, std::size_t classes, std::size_t size);
// Row range [begin, end) of class k's band.
std::pair<std::size_t, std::size_t> band_rows(std::size_t klass, std::size_t classes, std::size_t size);
// Row range [begin, end) of the k-th horizontal region of the image.
std::pair<std::size_t, std::size_t> region_rows(std::size_t klass, std::size_t classes, std::size_t size);

// In-memory corpus, quantised to 8 bits exactly as it is stored on disk.
fusion::Dataset make_synthetic(const SyntheticSpec& spec);

// Writes images/<split>_<class>_<n>.pgm and manifest.csv; returns the manifest path.
fs::path write_synthetic(const SyntheticSpec& spec, const fs::path& out_dir);

// ---- configuration --------------------------------------------------------------

struct RunConfig {
  fusion::HcnConfig hcn;
  SyntheticSpec synth;
  std::size_t image_height = 24;
  std::size_t image_width = 24;
};

// INI-style text: `key = value` lines, optional [section] headers
// (train, model, jcl, meta, synth). Unknown keys are rejected.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const fs::path& path);
// Every recognised key as section.key with its default rendered as text.
std::vector<std::string> config_keys();

// ---- model archive --------------------------------------------------------------

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string serialize_model(const fusion::HcnModel& m);
fusion::HcnModel deserialize_model(const std::string& bytes);
void save_model(const fusion::HcnModel& m, const fs::path& path);
fusion::HcnModel load_model(const fs::path& path);

// ---- triage ---------------------------------------------------------------------

std::string triage_route(const std::string& class_name);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& content);

}  // namespace hcn::dataio

#include <algorithm>
#include <cmath>
#include <fstream>

#include "expfuse/datasynth/datasynth.hpp"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/imgcore/io.hpp"
#include "expfuse/imgcore/mask.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace expfuse::datasynth {

namespace {

ImageRGB crop(const ImageRGB& img, int y0, int x0, int h, int w) {
  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out(y, x, c) = img(y0 + y, x0 + x, c);
  return out;
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
  require(fs::is_directory(dir), "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png"))
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// log2 exposure ratio from pixels unsaturated and above the noise floor in
// both images; clamped to the supported [1, 9] range.
double estimate_gap(const ImageRGB& ue, const ImageRGB& oe) {
  std::vector<double> r;
  auto a = ue.data();
  auto b = oe.data();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > 0.02f && b[i] < 0.95f && b[i] > a[i])
      r.push_back(kGamma * std::log2(static_cast<double>(b[i]) / a[i]));
  if (r.empty()) return 1.0;
  std::nth_element(r.begin(), r.begin() + r.size() / 2, r.end());
  return std::clamp(r[r.size() / 2], 1.0, 9.0);
}

std::string sample_name(std::size_t i, const char* part) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "samples/%06zu_%s.png", i, part);
  return buf;
}

}  // namespace

void SynthSample::validate() const {
  require(!oe.empty(), "SynthSample: empty");
  require_same_size(guidance, oe, "SynthSample guidance/oe");
  require_same_size(gt, oe, "SynthSample gt/oe");
  require_same_size(mask, oe, "SynthSample mask/oe");
  if (!ue.empty()) require_same_size(ue, oe, "SynthSample ue/oe");
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(y, x))
        for (int c = 0; c < 3; ++c) require(guidance(y, x, c) == 0.0f, "SynthSample: guidance nonzero under mask");
}

SynthSample make_sample(const ExposureTriplet& triplet, const BinaryMask& mask, std::uint64_t seed, int patch) {
  triplet.validate();
  require(patch >= 1, "make_sample: patch must be positive");
  require(patch <= triplet.oe.height() && patch <= triplet.oe.width(), "make_sample: patch larger than triplet");
  require(mask.height() >= 1 && mask.width() >= 1, "make_sample: empty mask");
  std::mt19937_64 rng = derive_rng(seed, 0, 0xC20);
  const int y0 = std::uniform_int_distribution<int>(0, triplet.oe.height() - patch)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, triplet.oe.width() - patch)(rng);
  SynthSample s;
  s.oe = crop(triplet.oe, y0, x0, patch, patch);
  s.ue = crop(triplet.ue, y0, x0, patch, patch);
  s.gt = crop(triplet.gt, y0, x0, patch, patch);
  s.mask = resize_mask(mask, patch, patch);
  s.guidance = apply_mask(s.ue, s.mask);
  return s;
}

void DatasetConfig::validate() const {
  require(patch >= 16 && patch % 16 == 0, "dataset: patch must be a positive multiple of 16");
  require(scene.height >= patch && scene.width >= patch, "dataset: scene smaller than patch");
  require(min_gap >= 1.0 && max_gap <= 9.0 && min_gap <= max_gap, "dataset: gap range must lie in [1, 9]");
  require(mask_pool >= 1, "dataset: mask_pool must be >= 1");
  require(empty_mask_prob >= 0.0 && empty_mask_prob <= 1.0, "dataset: empty_mask_prob must lie in [0, 1]");
  require(masks_per_pair >= 1, "dataset: masks_per_pair must be >= 1");
  consistency.validate();
}

std::vector<std::pair<std::string, ExposureTriplet>> load_external_scenes(const fs::path& dir) {
  std::vector<std::pair<std::string, ExposureTriplet>> out;
  for (const fs::path& scene : sorted_children(dir, true)) {
    const std::string name = scene.filename().string();
    std::vector<fs::path> shots;
    for (const fs::path& f : sorted_children(scene, false))
      if (f.filename() != "gt.png") shots.push_back(f);
    require(fs::exists(scene / "gt.png"), "external scene " + name + ": missing gt.png");
    require(shots.size() >= 2, "external scene " + name + ": need at least two exposures");
    ExposureTriplet t;
    t.ue = load_image(shots.front());
    t.oe = load_image(shots.back());
    t.gt = load_image(scene / "gt.png");
    require_same_size(t.ue, t.oe, ("external scene " + name).c_str());
    require_same_size(t.gt, t.oe, ("external scene " + name).c_str());
    t.ev_gap = estimate_gap(t.ue, t.oe);
    out.emplace_back(name, std::move(t));
  }
  require(!out.empty(), "external scenes: no scene folders in " + dir.string());
  return out;
}

std::vector<VideoClip> load_external_clips(const fs::path& dir) {
  std::vector<VideoClip> out;
  for (const fs::path& folder : sorted_children(dir, true)) {
    VideoClip c;
    for (const fs::path& f : sorted_children(folder, false)) c.frames.push_back(load_image(f));
    try {
      c.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("external clip " + folder.filename().string() + ": " + e.what());
    }
    out.push_back(std::move(c));
  }
  require(!out.empty(), "external clips: no clip folders in " + dir.string());
  return out;
}

std::vector<SynthSample> synthesize(std::size_t count, std::uint64_t seed, const DatasetConfig& cfg,
                                    std::vector<ManifestEntry>* entries) {
  cfg.validate();
  std::vector<SynthSample> samples;
  if (entries) entries->clear();
  if (count == 0) return samples;

  std::vector<BinaryMask> pool;
  if (cfg.external_clips) {
    for (const VideoClip& c : load_external_clips(*cfg.external_clips))
      pool.push_back(pseudo_occlusion_from_clip(c, cfg.consistency));
  } else {
    for (int j = 0; j < cfg.mask_pool; ++j) {
      const std::uint64_t clip_seed = derive_rng(seed, static_cast<std::uint64_t>(j), 0xA11)();
      pool.push_back(pseudo_occlusion_from_clip(procedural_clip(clip_seed, cfg.clip).clip, cfg.consistency));
    }
  }

  std::vector<std::pair<std::string, ExposureTriplet>> external;
  if (cfg.external_scenes) external = load_external_scenes(*cfg.external_scenes);

  std::size_t cached_pair = static_cast<std::size_t>(-1);
  ExposureTriplet triplet;
  std::string source = "procedural";
  std::uint64_t scene_seed = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pair = i / static_cast<std::size_t>(cfg.masks_per_pair);
    if (pair != cached_pair) {
      cached_pair = pair;
      if (external.empty()) {
        std::mt19937_64 r = derive_rng(seed, pair, 0x7A1);
        scene_seed = r();
        const double gap = std::uniform_real_distribution<double>(cfg.min_gap, cfg.max_gap)(r);
        triplet = procedural_triplet(scene_seed, gap, cfg.scene);
      } else {
        const auto& [name, t] = external[pair % external.size()];
        triplet = t;
        source = name;
        scene_seed = pair;
      }
    }
    std::mt19937_64 r = derive_rng(seed, i, 0x5A3);
    const bool empty = std::uniform_real_distribution<double>(0.0, 1.0)(r) < cfg.empty_mask_prob;
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(r);
    const std::uint64_t crop_seed = r();
    const BinaryMask& m = empty ? BinaryMask(1, 1, 0) : pool[pick];
    SynthSample s = make_sample(triplet, m, crop_seed, cfg.patch);
    s.validate();
    if (entries) {
      ManifestEntry e;
      e.index = i;
      e.oe = sample_name(i, "oe");
      e.ue = sample_name(i, "ue");
      e.guidance = sample_name(i, "guidance");
      e.gt = sample_name(i, "gt");
      e.mask = sample_name(i, "mask");
      e.ev_gap = triplet.ev_gap;
      e.seed = scene_seed;
      e.mask_coverage = s.mask.coverage();
      e.source = source;
      entries->push_back(std::move(e));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

Manifest build_dataset(std::size_t count, std::uint64_t seed, const fs::path& out_dir, const DatasetConfig& cfg) {
  Manifest m;
  m.root = out_dir;
  const std::vector<SynthSample> samples = synthesize(count, seed, cfg, &m.entries);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(IoErrc::kWriteFailed, "cannot create " + out_dir.string() + ": " + ec.message());
  if (count > 0) fs::create_directories(out_dir / "samples");

  std::ofstream manifest(out_dir / kManifestName, std::ios::binary | std::ios::trunc);
  if (!manifest) throw IoError(IoErrc::kWriteFailed, "cannot write manifest in " + out_dir.string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SynthSample& s = samples[i];
    const ManifestEntry& e = m.entries[i];
    save_image(s.oe, out_dir / e.oe, BitDepth::k16);
    save_image(s.ue, out_dir / e.ue, BitDepth::k16);
    save_image(s.guidance, out_dir / e.guidance, BitDepth::k16);
    save_image(s.gt, out_dir / e.gt, BitDepth::k16);
    save_mask(s.mask, out_dir / e.mask);
    nlohmann::json j = {{"index", e.index},   {"oe", e.oe},         {"ue", e.ue},
                        {"guidance", e.guidance}, {"gt", e.gt},     {"mask", e.mask},
                        {"ev_gap", e.ev_gap}, {"seed", e.seed},     {"mask_coverage", e.mask_coverage},
                        {"source", e.source}};
    manifest << j.dump() << '\n';
  }
  if (!manifest.flush()) throw IoError(IoErrc::kWriteFailed, "manifest write failed");
  return m;
}

Manifest read_manifest(const fs::path& dir_or_file) {
  const fs::path file = fs::is_directory(dir_or_file) ? dir_or_file / kManifestName : dir_or_file;
  std::ifstream in(file);
  if (!in) throw IoError(IoErrc::kFileNotFound, file.string());
  Manifest m;
  m.root = file.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.index = j.at("index").get<std::size_t>();
      e.oe = j.at("oe").get<std::string>();
      e.ue = j.value("ue", std::string{});
      e.guidance = j.at("guidance").get<std::string>();
      e.gt = j.at("gt").get<std::string>();
      e.mask = j.at("mask").get<std::string>();
      e.ev_gap = j.at("ev_gap").get<double>();
      e.seed = j.at("seed").get<std::uint64_t>();
      e.mask_coverage = j.at("mask_coverage").get<double>();
      e.source = j.value("source", std::string{"procedural"});
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(IoErrc::kCorruptData, file.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return m;
}

SynthSample load_sample(const Manifest& manifest, std::size_t i) {
  require(i < manifest.entries.size(), "load_sample: index out of range");
  const ManifestEntry& e = manifest.entries[i];
  SynthSample s;
  s.oe = load_image(manifest.root / e.oe);
  if (!e.ue.empty()) s.ue = load_image(manifest.root / e.ue);
  s.guidance = load_image(manifest.root / e.guidance);
  s.gt = load_image(manifest.root / e.gt);
  s.mask = load_mask(manifest.root / e.mask);
  s.validate();
  return s;
}

}  // namespace expfuse::datasynth

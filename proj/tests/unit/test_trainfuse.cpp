#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "expfuse/imgcore/error.hpp"
#include "expfuse/trainfuse/trainfuse.hpp"
#include "json.hpp"

using namespace expfuse;
using namespace expfuse::trainfuse;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.unet.base = 8;
  m.unet.seed = 3;
  m.vae.widths = {8, 8, 16};
  m.vae.seed = 4;
  return m;
}

const std::vector<SynthSample>& tiny_data() {
  static const std::vector<SynthSample> data = [] {
    datasynth::DatasetConfig dc;
    dc.patch = 32;
    dc.scene.height = dc.scene.width = 48;
    dc.clip.height = dc.clip.width = 32;
    dc.mask_pool = 2;
    dc.empty_mask_prob = 0.0;
    return datasynth::synthesize(6, 7, dc);
  }();
  return data;
}

TrainConfig cfg_for(Component c, int iterations, double lr = 1e-3) {
  TrainConfig t;
  t.component = c;
  t.iterations = iterations;
  t.batch = 2;
  t.lr = lr;
  t.seed = 11;
  return t;
}

// Backbone trained for a couple of steps per stage (quality is irrelevant here).
Bundle trained_backbone() {
  Bundle b(tiny_model());
  train(b, tiny_data(), cfg_for(Component::kVae, 2));
  train(b, tiny_data(), cfg_for(Component::kBackbone, 2));
  return b;
}

nn::Checkpoint snapshot(const nn::ParamStore<float>& ps) {
  nn::Checkpoint ck;
  ck.put_params("p", ps);
  return ck;
}

bool same_params(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, p] : a)
    if (!(p.value == b.at(name).value)) return false;
  return true;
}

bool unchanged(const nn::Checkpoint& before, const nn::ParamStore<float>& now) {
  for (const auto& [name, p] : now)
    if (!(before.get("p/" + name) == p.value)) return false;
  return true;
}

FusionRequest request(const ImageRGB& ue, const ImageRGB& oe, int steps, std::uint64_t seed = 0) {
  FusionRequest r;
  r.ue = ue;
  r.oe = oe;
  r.steps = steps;
  r.seed = seed;
  return r;
}

}  // namespace

TEST_CASE("config validation and component names") {
  for (const char* n : {"vae", "backbone", "dfcb", "fcb"}) CHECK(std::string(to_string(parse_component(n))) == n);
  CHECK_THROWS_AS(parse_component("unet"), ValidationError);
  TrainConfig c;
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  Bundle b(tiny_model());
  CHECK_THROWS_AS(train(b, {}, cfg_for(Component::kVae, 1)), ValidationError);
}

TEST_CASE("stages require their frozen prerequisites") {
  Bundle b(tiny_model());
  CHECK_THROWS_AS(train(b, tiny_data(), cfg_for(Component::kBackbone, 1)), StateError);
  CHECK_THROWS_AS(train(b, tiny_data(), cfg_for(Component::kDfcb, 1)), StateError);
  CHECK_THROWS_AS(train(b, tiny_data(), cfg_for(Component::kFcb, 1)), StateError);
  CHECK_FALSE(b.backbone.ready());
  train(b, tiny_data(), cfg_for(Component::kVae, 1));
  CHECK(b.complete(Component::kVae));
  CHECK_FALSE(b.backbone.ready());
  CHECK_THROWS_AS(train(b, tiny_data(), cfg_for(Component::kDfcb, 1)), StateError);
  train(b, tiny_data(), cfg_for(Component::kBackbone, 1));
  CHECK(b.backbone.ready());
  CHECK(b.backbone.vae.latent_scale() > 0.0f);
}

TEST_CASE("freeze contracts: only the selected component changes") {
  Bundle b = trained_backbone();
  b.ensure_dfcb();
  b.ensure_fcb();
  for (Component c : {Component::kDfcb, Component::kFcb, Component::kBackbone}) {
    std::map<Component, nn::Checkpoint> before;
    for (Component o : {Component::kVae, Component::kBackbone, Component::kDfcb, Component::kFcb})
      before[o] = snapshot(b.params(o));
    const float scale = b.backbone.vae.latent_scale();
    train(b, tiny_data(), cfg_for(c, b.steps_done(c) + 2));
    INFO(to_string(c));
    CHECK_FALSE(unchanged(before[c], b.params(c)));
    for (Component o : {Component::kVae, Component::kBackbone, Component::kDfcb, Component::kFcb})
      if (o != c) CHECK(unchanged(before[o], b.params(o)));
    CHECK(b.backbone.vae.latent_scale() == scale);
  }
}

TEST_CASE("resume from a checkpoint continues the run bitwise") {
  for (Component c : {Component::kVae, Component::kDfcb}) {
    INFO(to_string(c));
    Bundle base = c == Component::kVae ? Bundle(tiny_model()) : trained_backbone();
    const fs::path path = fs::temp_directory_path() / "expfuse_resume.ckpt";
    base.save(path);

    Bundle straight = Bundle::load(path);
    const TrainReport full = train(straight, tiny_data(), cfg_for(c, straight.steps_done(c) + 6));

    Bundle first = Bundle::load(path);
    const TrainReport head = train(first, tiny_data(), cfg_for(c, first.steps_done(c) + 3));
    first.save(path);
    Bundle second = Bundle::load(path);
    const TrainReport tail = train(second, tiny_data(), cfg_for(c, full.last_step));
    fs::remove(path);

    REQUIRE(full.losses.size() == 6);
    REQUIRE(head.losses.size() == 3);
    REQUIRE(tail.losses.size() == 3);
    CHECK(tail.first_step == head.last_step);
    for (int i = 0; i < 3; ++i) {
      CHECK(full.losses[i] == head.losses[i]);
      CHECK(full.losses[3 + i] == tail.losses[i]);
    }
    CHECK(same_params(straight.params(c), second.params(c)));
    // Already at the target: nothing runs.
    CHECK(train(second, tiny_data(), cfg_for(c, full.last_step)).losses.empty());
  }
}

TEST_CASE("zero-initialised FCB reproduces the plain VAE reconstruction") {
  Bundle b = trained_backbone();
  b.ensure_fcb();
  CHECK(fcb_l1(b, tiny_data(), true) == fcb_l1(b, tiny_data(), false));
  b.ensure_dfcb();
  CHECK(denoiser_loss(b, tiny_data(), 3, true) == denoiser_loss(b, tiny_data(), 3, false));
}

TEST_CASE("non-finite loss aborts within one step and reports the batch") {
  Bundle b(tiny_model());
  auto& p = b.params(Component::kVae).at(b.params(Component::kVae).begin()->first);
  p.value[0] = std::numeric_limits<float>::quiet_NaN();
  const nn::Checkpoint before = snapshot(b.params(Component::kVae));
  std::vector<StepRecord> seen;
  std::string message;
  try {
    train(b, tiny_data(), cfg_for(Component::kVae, 5), [&](const StepRecord& r) { seen.push_back(r); });
  } catch (const NumericError& e) {
    message = e.what();
  }
  REQUIRE(seen.size() == 1);
  CHECK_FALSE(seen[0].finite);
  CHECK(seen[0].batch.size() == 2);
  CHECK(message.find("step 1") != std::string::npos);
  CHECK(message.find("batch indices [") != std::string::npos);
  CHECK(b.steps_done(Component::kVae) == 0);
  // Weights other than the poisoned one were not touched by an update.
  for (const auto& [name, q] : b.params(Component::kVae))
    for (std::size_t i = 0; i < q.value.size(); ++i) {
      const float was = before.get("p/" + name)[i];
      CHECK((q.value[i] == was || (std::isnan(q.value[i]) && std::isnan(was))));
    }
}

TEST_CASE("metrics log is JSON lines with step, loss, lr and wall time") {
  const fs::path path = fs::temp_directory_path() / "expfuse_metrics.jsonl";
  fs::remove(path);
  {
    MetricsLog log(path, false);
    Bundle b(tiny_model());
    train(b, tiny_data(), cfg_for(Component::kVae, 3), std::ref(log));
  }
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step").get<int>() == ++n);
    CHECK(j.at("loss").is_number());
    CHECK(j.at("lr").get<double>() == 1e-3);
    CHECK(j.at("wall_time").get<double>() >= 0.0);
    CHECK(j.at("component") == "vae");
  }
  CHECK(n == 3);
  fs::remove(path);
}

TEST_CASE("fuse contracts") {
  Bundle b = trained_backbone();
  const SynthSample& s = tiny_data()[0];
  FusionRequest req = request(s.ue, s.oe, 3, 5);
  CHECK_THROWS_AS(fuse(b, req), StateError);
  train(b, tiny_data(), cfg_for(Component::kDfcb, 1));
  CHECK_THROWS_AS(fuse(b, req), StateError);
  train(b, tiny_data(), cfg_for(Component::kFcb, 1));

  const FusionResult a = fuse(b, req);
  CHECK(a.image.height() == s.oe.height());
  CHECK(a.image.width() == s.oe.width());
  CHECK(a.stage1.mask.height() == s.oe.height());
  CHECK(fuse(b, req).image == a.image);
  FusionRequest other = req;
  other.seed = 6;
  CHECK_FALSE(fuse(b, other).image == a.image);

  // Sizes not divisible by the model's divisor are padded and cropped back.
  ImageRGB ue(20, 28, 0.2f), oe(20, 28, 0.8f);
  const FusionResult odd = fuse(b, request(ue, oe, 2));
  CHECK(odd.image.height() == 20);
  CHECK(odd.image.width() == 28);
  CHECK(odd.structure.height() == 20);

  CHECK_THROWS_AS(fuse(b, request(ImageRGB(20, 20), ImageRGB(20, 24), 2)), ValidationError);
  CHECK_THROWS_AS(fuse(b, request(ImageRGB(18, 20), ImageRGB(18, 20), 2)), ValidationError);

  // A saved and reloaded bundle fuses identically.
  const fs::path path = fs::temp_directory_path() / "expfuse_fuse.ckpt";
  b.save(path);
  const Bundle r = Bundle::load(path);
  fs::remove(path);
  CHECK(fuse(r, req).image == a.image);
}

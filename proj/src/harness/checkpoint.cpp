#include "vit/harness/checkpoint.hpp"

#include <unordered_map>

#include "vit/harness/config.hpp"

namespace vit {

std::vector<StoredTensor> checkpoint_tensors(const ViTModel<float>& model, const TrainState<float>* state) {
  std::vector<StoredTensor> out;
  out.push_back(StoredTensor::from_text("meta/config", model_config_text(model.config())));
  const auto& params = model.parameters();
  for (const auto& p : params) out.push_back(StoredTensor::from(p.name, p.value));
  if (!state) return out;
  state->check(params);
  out.push_back(StoredTensor::from_text("opt/config", optim_config_text(state->cfg)));
  out.push_back(StoredTensor::from("opt/step", Tensor<double>({1}, static_cast<double>(state->step))));
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(StoredTensor::from("opt/m/" + params[i].name, state->m[i]));
  for (std::size_t i = 0; i < state->v.size(); ++i) {
    out.push_back(StoredTensor::from("opt/v/" + params[i].name, state->v[i]));
  }
  for (std::size_t i = 0; i < state->ema.size(); ++i) {
    out.push_back(StoredTensor::from("ema/" + params[i].name, state->ema[i]));
  }
  return out;
}

namespace {

class Index {
 public:
  explicit Index(const std::vector<StoredTensor>& ts) {
    for (const auto& t : ts) {
      if (!map_.emplace(t.name, &t).second) throw FormatError("duplicate tensor '" + t.name + "'", t.offset);
    }
  }
  const StoredTensor* find(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) return nullptr;
    used_.push_back(name);
    return it->second;
  }
  const StoredTensor& get(const std::string& name) {
    const auto* t = find(name);
    if (!t) throw FormatError("checkpoint is missing tensor '" + name + "'", 0);
    return *t;
  }
  void check_all_used() const {
    for (const auto& [name, t] : map_) {
      if (std::find(used_.begin(), used_.end(), name) == used_.end()) {
        throw FormatError("checkpoint holds unexpected tensor '" + name + "'", t->offset);
      }
    }
  }

 private:
  std::unordered_map<std::string, const StoredTensor*> map_;
  std::vector<std::string> used_;
};

Tensor<float> expect(Index& index, const std::string& name, const Shape& shape) {
  const StoredTensor& t = index.get(name);
  if (t.type != StoredType::f32) throw FormatError("tensor '" + name + "' is not f32", t.offset);
  if (t.shape != shape) {
    throw FormatError("tensor '" + name + "' has shape " + shape_str(t.shape) + ", config expects " + shape_str(shape),
                      t.offset);
  }
  return t.as<float>();
}

}  // namespace

Checkpoint checkpoint_from_tensors(const std::vector<StoredTensor>& tensors) {
  Index index(tensors);
  const StoredTensor& meta = index.get("meta/config");
  ViTConfig cfg;
  try {
    cfg = model_config_from_text(meta.text());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model config: ") + e.what(), meta.offset);
  }
  Checkpoint ck{ViTModel<float>(cfg, 0), std::nullopt};
  auto& params = ck.model.parameters();
  for (auto& p : params) p.value = expect(index, p.name, p.value.shape());

  if (const StoredTensor* oc = index.find("opt/config")) {
    OptimConfig optim;
    try {
      optim = optim_config_from_text(oc->text());
    } catch (const ConfigError& e) {
      throw FormatError(std::string("bad optimizer config: ") + e.what(), oc->offset);
    }
    TrainState<float> st = TrainState<float>::init(params, optim);
    const StoredTensor& step = index.get("opt/step");
    if (step.type != StoredType::f64 || step.shape != Shape{1}) throw FormatError("opt/step must be one f64", step.offset);
    st.step = static_cast<std::size_t>(step.as<double>()[0]);
    for (std::size_t i = 0; i < params.size(); ++i) st.m[i] = expect(index, "opt/m/" + params[i].name, params[i].value.shape());
    for (std::size_t i = 0; i < st.v.size(); ++i) st.v[i] = expect(index, "opt/v/" + params[i].name, params[i].value.shape());
    for (std::size_t i = 0; i < st.ema.size(); ++i) st.ema[i] = expect(index, "ema/" + params[i].name, params[i].value.shape());
    ck.state = std::move(st);
  }
  index.check_all_used();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ViTModel<float>& model, const TrainState<float>* state) {
  write_container(path, checkpoint_tensors(model, state));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_tensors(read_container(path)); }

}  // namespace vit

#include "longstory/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace longstory {

using nn::Tensor;

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (grad_clip_norm <= 0) throw std::invalid_argument("TrainConfig: grad_clip_norm must be > 0");
  if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size != 1)
    throw std::invalid_argument("TrainConfig: only batch_size 1 is supported");
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["epsilon"] = epsilon;
  j["grad_clip_norm"] = grad_clip_norm;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["eval_every"] = eval_every;
  j["checkpoint_dir"] = checkpoint_dir;
  j["max_steps"] = max_steps;
  j["input_cap"] = input.input_cap;
  j["strip_new_discourse"] = input.strip_new_discourse;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  TrainConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "learning_rate") cfg.learning_rate = it.value().get<double>();
    else if (key == "beta1") cfg.beta1 = it.value().get<double>();
    else if (key == "beta2") cfg.beta2 = it.value().get<double>();
    else if (key == "epsilon") cfg.epsilon = it.value().get<double>();
    else if (key == "grad_clip_norm") cfg.grad_clip_norm = it.value().get<double>();
    else if (key == "epochs") cfg.epochs = it.value().get<std::size_t>();
    else if (key == "batch_size") cfg.batch_size = it.value().get<std::size_t>();
    else if (key == "seed") cfg.seed = it.value().get<std::uint64_t>();
    else if (key == "eval_every") cfg.eval_every = it.value().get<std::size_t>();
    else if (key == "checkpoint_dir") cfg.checkpoint_dir = it.value().get<std::string>();
    else if (key == "max_steps") cfg.max_steps = it.value().get<std::size_t>();
    else if (key == "input_cap") cfg.input.input_cap = it.value().get<std::size_t>();
    else if (key == "strip_new_discourse") cfg.input.strip_new_discourse = it.value().get<bool>();
    else throw std::invalid_argument("TrainConfig: unknown key '" + key + "'");
  }
  return cfg;
}

AdamOptimizer::AdamOptimizer(nn::ParamStore& params, double lr, double beta1, double beta2,
                             double epsilon)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& [name, t] : params.all()) {
    Slot slot;
    slot.m.assign(t.size(), 0.0);
    slot.v.assign(t.size(), 0.0);
    slots_.emplace(name, std::move(slot));
  }
}

void AdamOptimizer::step(double grad_clip_norm) {
  // Name audit: the slot map and the live store must agree exactly.
  if (slots_.size() != params_->all().size())
    throw std::logic_error("AdamOptimizer: parameter set changed since construction");

  double sq_norm = 0.0;
  for (const auto& [name, t] : params_->all()) {
    for (double g : t.grad()) sq_norm += g * g;
  }
  const double norm = std::sqrt(sq_norm);
  const double clip_scale = norm > grad_clip_norm ? grad_clip_norm / norm : 1.0;

  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  auto slot_it = slots_.begin();
  for (const auto& [name, t] : params_->all()) {
    if (slot_it == slots_.end() || slot_it->first != name)
      throw std::logic_error("AdamOptimizer: parameter '" + name + "' missing from slots");
    Slot& slot = slot_it->second;
    ++slot_it;
    auto& value = t.value();
    auto& grad = t.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * clip_scale;
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      value[i] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
    }
  }
}

std::map<std::string, Tensor> AdamOptimizer::export_state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, slot] : slots_) {
    const Tensor t = params_->get(name);
    out.emplace("adam.m." + name, Tensor::from_values(t.rows(), t.cols(), slot.m));
    out.emplace("adam.v." + name, Tensor::from_values(t.rows(), t.cols(), slot.v));
  }
  out.emplace("adam.step", Tensor::scalar(static_cast<double>(step_count_)));
  return out;
}

void AdamOptimizer::import_state(const std::map<std::string, Tensor>& state) {
  for (auto& [name, slot] : slots_) {
    auto m = state.find("adam.m." + name);
    auto v = state.find("adam.v." + name);
    if (m == state.end() || v == state.end())
      throw std::runtime_error("AdamOptimizer: checkpoint missing state for '" + name + "'");
    slot.m = m->second.value();
    slot.v = v->second.value();
  }
  auto s = state.find("adam.step");
  if (s == state.end()) throw std::runtime_error("AdamOptimizer: checkpoint missing adam.step");
  step_count_ = static_cast<std::size_t>(s->second.item());
}

std::string TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["steps"] = steps;
  j["initial_valid_loss"] = initial_valid_loss;
  j["final_valid_loss"] = final_valid_loss;
  auto curve = [](const std::vector<std::pair<std::size_t, double>>& c) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& [step, loss] : c) arr.push_back({{"step", step}, {"loss", loss}});
    return arr;
  };
  j["train_curve"] = curve(train_curve);
  j["valid_curve"] = curve(valid_curve);
  return j.dump();
}

Trainer::Trainer(LongStoryModel& model, const tok::Vocabulary& vocab, TrainConfig cfg)
    : model_(&model),
      vocab_(&vocab),
      cfg_(std::move(cfg)),
      optimizer_(model.params(), cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.epsilon),
      data_rng_(cfg_.seed) {
  cfg_.validate();
  epoch_rng_state_ = data_rng_.serialize();
}

std::vector<ParagraphLoss> Trainer::run_document(const text::PreparedDocument& doc,
                                                 bool accumulate) {
  if (doc.paragraphs.empty())
    throw std::invalid_argument("train_document: document '" + doc.id + "' has no paragraphs");
  std::vector<ParagraphLoss> losses;
  std::vector<std::vector<int>> gold_ids;
  for (const auto& p : doc.paragraphs) gold_ids.push_back(vocab_->encode(p));

  Tensor memory_carry;  // detached value of M^{t-1}
  std::vector<std::vector<int>> prev_paragraphs;
  for (std::size_t t = 1; t <= doc.paragraphs.size(); ++t) {
    const auto& discourse_names = doc.discourse[t - 1];
    std::vector<int> discourse_ids;
    for (const auto& name : discourse_names) {
      const int id = tok::discourse_id(name);
      if (cfg_.input.strip_new_discourse && tok::is_new_discourse_token(id)) continue;
      discourse_ids.push_back(id);
    }
    const std::vector<int> x_ids =
        tok::build_model_input(*vocab_, doc.keywords, discourse_names, cfg_.input);

    static const std::vector<int> kNoPrev;
    const std::vector<int>& prev = t > 1 ? gold_ids[t - 2] : kNoPrev;
    CalibratorOutput calib = model_->calibrate(discourse_ids, prev);

    Tensor memory;
    if (t == 1) {
      memory = model_->init_memory(tok::keyword_token_ids(*vocab_, doc.keywords));
    } else {
      // Gradient flow is truncated across paragraphs: the carried memory is a
      // detached value, only this step's update is on the tape.
      memory = model_->memory_update(memory_carry, model_->paragraph_mean_embedding(prev));
    }
    CheatingContext cheating = model_->build_cheating(prev_paragraphs);

    std::vector<int> targets = gold_ids[t - 1];
    targets.push_back(tok::kEos);
    Tensor logits = model_->forward(x_ids, targets, memory, cheating.c, calib.mix);
    Tensor loss = LongStoryModel::lm_loss(logits, targets);
    if (accumulate) nn::backward(loss);

    ParagraphLoss rec;
    rec.loss = loss.item();
    rec.tokens = targets.size();
    rec.mix = calib.mix.values();
    losses.push_back(rec);

    memory_carry = nn::detach(memory);
    prev_paragraphs.push_back(gold_ids[t - 1]);
  }
  return losses;
}

std::vector<ParagraphLoss> Trainer::train_document(const text::PreparedDocument& doc) {
  return run_document(doc, /*accumulate=*/true);
}

double Trainer::evaluate(const std::vector<text::PreparedDocument>& docs) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& doc : docs) {
    for (const auto& rec : run_document(doc, /*accumulate=*/false)) {
      total += rec.loss * static_cast<double>(rec.tokens);
      tokens += rec.tokens;
    }
  }
  if (tokens == 0) throw std::invalid_argument("evaluate: no tokens in validation set");
  return total / static_cast<double>(tokens);
}

void Trainer::save_checkpoint_file(const std::string& path, const std::string& dtype) const {
  nlohmann::ordered_json extra;
  extra["train_config"] = nlohmann::json::parse(cfg_.to_json());
  extra["trainer"] = {{"step", step_},
                      {"epoch", epoch_},
                      {"pos_in_epoch", pos_in_epoch_},
                      {"epoch_rng_state", epoch_rng_state_}};
  try {
    save_model(path, *model_, *vocab_, extra.dump(), optimizer_.export_state(), dtype);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint write failed at '" + path + "': " + e.what());
  }
}

void Trainer::restore(const ModelBundle& bundle) {
  optimizer_.import_state(bundle.extra);
  auto meta = nlohmann::json::parse(bundle.metadata_json);
  const auto& t = meta.at("extra").at("trainer");
  step_ = t.at("step").get<std::size_t>();
  epoch_ = t.at("epoch").get<std::size_t>();
  pos_in_epoch_ = t.at("pos_in_epoch").get<std::size_t>();
  epoch_rng_state_ = t.at("epoch_rng_state").get<std::string>();
  data_rng_.deserialize(epoch_rng_state_);
}

TrainReport Trainer::fit(const std::vector<text::PreparedDocument>& train_docs,
                         const std::vector<text::PreparedDocument>& valid_docs) {
  if (train_docs.empty()) throw std::invalid_argument("fit: empty training set");
  TrainReport report;
  if (!valid_docs.empty()) {
    report.initial_valid_loss = evaluate(valid_docs);
    report.valid_curve.emplace_back(step_, report.initial_valid_loss);
  }
  if (!cfg_.checkpoint_dir.empty()) std::filesystem::create_directories(cfg_.checkpoint_dir);

  bool stop = false;
  for (; epoch_ < cfg_.epochs && !stop; ++epoch_, pos_in_epoch_ = 0) {
    // The order is re-drawable from the state captured at the top of the
    // epoch, which is what checkpoints store for resume.
    epoch_rng_state_ = data_rng_.serialize();
    std::vector<std::size_t> order(train_docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    data_rng_.shuffle(order);
    for (; pos_in_epoch_ < order.size(); ++pos_in_epoch_) {
      const auto& doc = train_docs[order[pos_in_epoch_]];
      model_->params().zero_grad();
      const auto losses = train_document(doc);
      optimizer_.step(cfg_.grad_clip_norm);
      ++step_;

      double total = 0.0;
      std::size_t tokens = 0;
      for (const auto& rec : losses) {
        total += rec.loss * static_cast<double>(rec.tokens);
        tokens += rec.tokens;
      }
      report.train_curve.emplace_back(step_, total / static_cast<double>(tokens));

      if (cfg_.eval_every != 0 && step_ % cfg_.eval_every == 0) {
        if (!valid_docs.empty())
          report.valid_curve.emplace_back(step_, evaluate(valid_docs));
        if (!cfg_.checkpoint_dir.empty()) {
          // The cursor points at the next unprocessed document.
          ++pos_in_epoch_;
          save_checkpoint_file(cfg_.checkpoint_dir + "/step_" + std::to_string(step_) + ".ckpt");
          --pos_in_epoch_;
        }
      }
      if (cfg_.max_steps != 0 && step_ >= cfg_.max_steps) {
        stop = true;
        ++pos_in_epoch_;
        break;
      }
    }
  }
  if (!valid_docs.empty()) {
    report.final_valid_loss = evaluate(valid_docs);
    report.valid_curve.emplace_back(step_, report.final_valid_loss);
  }
  report.steps = step_;
  if (!cfg_.checkpoint_dir.empty())
    save_checkpoint_file(cfg_.checkpoint_dir + "/final.ckpt");
  return report;
}

}  // namespace longstory

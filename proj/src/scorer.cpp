#include "longstory/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "longstory/checkpoint.hpp"
#include "longstory/rng.hpp"
#include "longstory/trainer.hpp"
#include "nlohmann/json.hpp"

namespace longstory::metrics {

using nn::Tensor;

std::string ScorerConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["tokens_per_side"] = tokens_per_side;
  j["init_seed"] = init_seed;
  j["learning_rate"] = learning_rate;
  j["grad_clip_norm"] = grad_clip_norm;
  j["epochs"] = epochs;
  j["shuffle_seed"] = shuffle_seed;
  return j.dump();
}

ScorerConfig ScorerConfig::from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  ScorerConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "vocab_size") cfg.vocab_size = it.value().get<std::size_t>();
    else if (key == "d_model") cfg.d_model = it.value().get<std::size_t>();
    else if (key == "n_layers") cfg.n_layers = it.value().get<std::size_t>();
    else if (key == "n_heads") cfg.n_heads = it.value().get<std::size_t>();
    else if (key == "tokens_per_side") cfg.tokens_per_side = it.value().get<std::size_t>();
    else if (key == "init_seed") cfg.init_seed = it.value().get<std::uint64_t>();
    else if (key == "learning_rate") cfg.learning_rate = it.value().get<double>();
    else if (key == "grad_clip_norm") cfg.grad_clip_norm = it.value().get<double>();
    else if (key == "epochs") cfg.epochs = it.value().get<std::size_t>();
    else if (key == "shuffle_seed") cfg.shuffle_seed = it.value().get<std::uint64_t>();
    else throw std::invalid_argument("ScorerConfig: unknown key '" + key + "'");
  }
  return cfg;
}

Scorer::Scorer(ScorerConfig cfg, ScorerKind kind) : cfg_(std::move(cfg)), kind_(kind) {
  if (cfg_.vocab_size == 0) throw std::invalid_argument("ScorerConfig: vocab_size not set");
  if (cfg_.d_model % cfg_.n_heads != 0)
    throw std::invalid_argument("ScorerConfig: d_model must be divisible by n_heads");
  const std::size_t d = cfg_.d_model;
  const std::size_t max_len = 2 * cfg_.tokens_per_side + 2;
  params_.create("embed.tok", cfg_.vocab_size, d);
  params_.create("embed.pos", max_len, d);
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    params_.create(p + "attn.wq", d, d);
    params_.create(p + "attn.wk", d, d);
    params_.create(p + "attn.wv", d, d);
    params_.create(p + "attn.wo", d, d);
    params_.create(p + "ln1.gain", 1, d);
    params_.create(p + "ln1.bias", 1, d);
    params_.create(p + "ln2.gain", 1, d);
    params_.create(p + "ln2.bias", 1, d);
    params_.create(p + "ffn.w1", d, d * 4);
    params_.create(p + "ffn.bias1", 1, d * 4);
    params_.create(p + "ffn.w2", d * 4, d);
    params_.create(p + "ffn.bias2", 1, d);
  }
  params_.create("final_ln.gain", 1, d);
  params_.create("final_ln.bias", 1, d);
  params_.create("head.w", d, 1);
  params_.create("head.bias", 1, 1);

  Rng rng(cfg_.init_seed);
  for (const auto& [name, t] : params_.all()) {
    auto& v = t.value();
    if (name.ends_with(".gain"))
      std::fill(v.begin(), v.end(), 1.0);
    else if (name.find(".bias") != std::string::npos)
      std::fill(v.begin(), v.end(), 0.0);
    else
      for (auto& x : v) x = rng.normal(0.0, 0.05);
  }
}

std::vector<int> Scorer::clip_side(const std::vector<int>& ids) const {
  if (ids.size() <= cfg_.tokens_per_side) return ids;
  // Trailing window: paragraph endings carry the completeness signal.
  return std::vector<int>(ids.end() - static_cast<std::ptrdiff_t>(cfg_.tokens_per_side),
                          ids.end());
}

Tensor Scorer::logit(const std::vector<int>& a_ids, const std::vector<int>& b_ids) const {
  std::vector<int> seq;
  seq.push_back(tok::kCls);
  const std::vector<int> a = clip_side(a_ids);
  seq.insert(seq.end(), a.begin(), a.end());
  if (!b_ids.empty()) {
    seq.push_back(tok::kSep);
    const std::vector<int> b = clip_side(b_ids);
    seq.insert(seq.end(), b.begin(), b.end());
  }
  const std::size_t len = seq.size();
  const std::size_t d = cfg_.d_model;
  Tensor h = nn::add(nn::embedding_lookup(params_.get("embed.tok"), seq),
                     nn::slice_rows(params_.get("embed.pos"), 0, len));
  const std::size_t dh = d / cfg_.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    Tensor normed =
        nn::layer_norm(h, params_.get(p + "ln1.gain"), params_.get(p + "ln1.bias"));
    Tensor q = nn::matmul(normed, params_.get(p + "attn.wq"));
    Tensor k = nn::matmul(normed, params_.get(p + "attn.wk"));
    Tensor v = nn::matmul(normed, params_.get(p + "attn.wv"));
    std::vector<Tensor> heads;
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      const std::size_t c0 = hd * dh, c1 = c0 + dh;
      Tensor scores = nn::scale(
          nn::matmul(nn::slice_cols(q, c0, c1), nn::transpose(nn::slice_cols(k, c0, c1))),
          inv_sqrt);
      heads.push_back(nn::matmul(nn::softmax_rows(scores), nn::slice_cols(v, c0, c1)));
    }
    h = nn::add(h, nn::matmul(nn::concat_cols(heads), params_.get(p + "attn.wo")));
    Tensor normed2 =
        nn::layer_norm(h, params_.get(p + "ln2.gain"), params_.get(p + "ln2.bias"));
    Tensor mid = nn::tanh(nn::add(nn::matmul(normed2, params_.get(p + "ffn.w1")),
                                  params_.get(p + "ffn.bias1")));
    h = nn::add(h, nn::add(nn::matmul(mid, params_.get(p + "ffn.w2")),
                           params_.get(p + "ffn.bias2")));
  }
  h = nn::layer_norm(h, params_.get("final_ln.gain"), params_.get("final_ln.bias"));
  Tensor cls = nn::slice_rows(h, 0, 1);
  return nn::add(nn::matmul(cls, params_.get("head.w")), params_.get("head.bias"));
}

double Scorer::score(const tok::Vocabulary& vocab, const std::string& a,
                     const std::string& b) const {
  const Tensor z = logit(vocab.encode(a), b.empty() ? std::vector<int>{} : vocab.encode(b));
  const double x = z.item();
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

ScorerTrainReport Scorer::train(const ScorerDataset& train_set, const ScorerDataset& eval_set,
                                const tok::Vocabulary& vocab) {
  if (train_set.kind != kind_) throw std::invalid_argument("Scorer::train: dataset kind mismatch");
  AdamOptimizer opt(params_, cfg_.learning_rate, 0.9, 0.999, 1e-8);
  Rng rng(cfg_.shuffle_seed);
  ScorerTrainReport report;
  // Pre-encode once.
  std::vector<std::pair<std::vector<int>, std::vector<int>>> encoded;
  for (const auto& ex : train_set.examples)
    encoded.emplace_back(vocab.encode(ex.a),
                         ex.b.empty() ? std::vector<int>{} : vocab.encode(ex.b));
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      params_.zero_grad();
      Tensor loss = nn::bce_with_logit(logit(encoded[idx].first, encoded[idx].second),
                                       static_cast<double>(train_set.examples[idx].label));
      nn::backward(loss);
      opt.step(cfg_.grad_clip_norm);
      epoch_loss += loss.item();
      ++report.steps;
    }
    report.final_train_loss = epoch_loss / static_cast<double>(order.size());
  }
  if (!eval_set.examples.empty()) report.held_out_accuracy = accuracy(eval_set, vocab);
  return report;
}

double Scorer::accuracy(const ScorerDataset& ds, const tok::Vocabulary& vocab) const {
  if (ds.examples.empty()) throw std::invalid_argument("Scorer::accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : ds.examples) {
    const double s = score(vocab, ex.a, ex.b);
    if ((s > 0.5) == (ex.label == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.examples.size());
}

void Scorer::save(const std::string& path, const tok::Vocabulary& vocab) const {
  nlohmann::ordered_json meta;
  meta["scorer_config"] = nlohmann::json::parse(cfg_.to_json());
  meta["kind"] = kind_ == ScorerKind::kCoherence ? "coherence" : "completeness";
  meta["vocab"] = nlohmann::json::parse(vocab.to_json());
  std::map<std::string, Tensor> tensors(params_.all().begin(), params_.all().end());
  save_checkpoint(path, tensors, meta.dump());
}

Scorer Scorer::load(const std::string& path, tok::Vocabulary* vocab_out) {
  Checkpoint ckpt = load_checkpoint(path);
  auto meta = nlohmann::json::parse(ckpt.metadata_json);
  ScorerConfig cfg = ScorerConfig::from_json(meta.at("scorer_config").dump());
  const std::string kind_name = meta.at("kind").get<std::string>();
  const ScorerKind kind =
      kind_name == "coherence" ? ScorerKind::kCoherence : ScorerKind::kCompleteness;
  Scorer scorer(cfg, kind);
  for (const auto& [name, t] : scorer.params_.all()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("Scorer::load: checkpoint missing '" + name + "'");
    t.value() = it->second.value();
  }
  if (vocab_out) *vocab_out = tok::Vocabulary::from_json(meta.at("vocab").dump());
  return scorer;
}

double completeness_report(const Scorer& scorer, const tok::Vocabulary& vocab,
                           const std::vector<std::string>& paragraphs) {
  if (paragraphs.size() < 2)
    throw std::invalid_argument("completeness_report: needs at least two paragraphs");
  const double last = scorer.score(vocab, paragraphs.back());
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < paragraphs.size(); ++i) sum += scorer.score(vocab, paragraphs[i]);
  const double mean = sum / static_cast<double>(paragraphs.size() - 1);
  return (last - mean) * 100.0;
}

double coherence_report(const Scorer& scorer, const tok::Vocabulary& vocab,
                        const std::vector<std::string>& paragraphs) {
  if (paragraphs.size() < 2)
    throw std::invalid_argument("coherence_report: needs at least two paragraphs");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < paragraphs.size(); ++i)
    sum += scorer.score(vocab, paragraphs[i], paragraphs[i + 1]);
  return sum / static_cast<double>(paragraphs.size() - 1) * 100.0;
}

}  // namespace longstory::metrics

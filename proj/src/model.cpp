#include "longstory/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "longstory/rng.hpp"
#include "longstory/vocab.hpp"
#include "nlohmann/json.hpp"

namespace longstory {

using nn::Tensor;

namespace {
constexpr double kInitStd = 0.05;
constexpr double kMaskFill = -1e9;
}  // namespace

Variant variant_from_string(const std::string& s) {
  if (s == "standard") return Variant::kStandard;
  if (s == "augmented") return Variant::kAugmented;
  if (s == "no_memory") return Variant::kNoMemory;
  if (s == "no_cheating") return Variant::kNoCheating;
  throw std::invalid_argument("unknown variant '" + s +
                              "' (expected standard|augmented|no_memory|no_cheating)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kStandard: return "standard";
    case Variant::kAugmented: return "augmented";
    case Variant::kNoMemory: return "no_memory";
    case Variant::kNoCheating: return "no_cheating";
  }
  throw std::logic_error("bad variant");
}

void ModelConfig::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("ModelConfig: vocab_size not set");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  if (calibrator.d_model == 0 || calibrator.n_heads == 0 ||
      calibrator.d_model % calibrator.n_heads != 0)
    throw std::invalid_argument("ModelConfig: calibrator d_model must be divisible by its n_heads");
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("ModelConfig: alpha outside [0, 1]");
  if (cheating_token_budget < 1)
    throw std::invalid_argument("ModelConfig: cheating_token_budget must be >= 1");
  if (cheating_token_budget > max_seq_len)
    throw std::invalid_argument("ModelConfig: cheating_token_budget exceeds max_seq_len");
  if (n_layers == 0 || calibrator.n_layers == 0)
    throw std::invalid_argument("ModelConfig: layer counts must be >= 1");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ffn_dim"] = ffn_dim;
  j["memory_slots"] = memory_slots;
  j["cheating_token_budget"] = cheating_token_budget;
  j["max_seq_len"] = max_seq_len;
  j["alpha"] = alpha;
  j["variant"] = longstory::to_string(variant);
  j["calibrator"] = {{"d_model", calibrator.d_model},
                     {"n_layers", calibrator.n_layers},
                     {"n_heads", calibrator.n_heads},
                     {"input_cap", calibrator.input_cap}};
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  ModelConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "vocab_size") cfg.vocab_size = it.value().get<std::size_t>();
    else if (key == "d_model") cfg.d_model = it.value().get<std::size_t>();
    else if (key == "n_layers") cfg.n_layers = it.value().get<std::size_t>();
    else if (key == "n_heads") cfg.n_heads = it.value().get<std::size_t>();
    else if (key == "ffn_dim") cfg.ffn_dim = it.value().get<std::size_t>();
    else if (key == "memory_slots") cfg.memory_slots = it.value().get<std::size_t>();
    else if (key == "cheating_token_budget") cfg.cheating_token_budget = it.value().get<std::size_t>();
    else if (key == "max_seq_len") cfg.max_seq_len = it.value().get<std::size_t>();
    else if (key == "alpha") cfg.alpha = it.value().get<double>();
    else if (key == "variant") cfg.variant = variant_from_string(it.value().get<std::string>());
    else if (key == "init_seed") cfg.init_seed = it.value().get<std::uint64_t>();
    else if (key == "calibrator") {
      for (auto c = it.value().begin(); c != it.value().end(); ++c) {
        if (c.key() == "d_model") cfg.calibrator.d_model = c.value().get<std::size_t>();
        else if (c.key() == "n_layers") cfg.calibrator.n_layers = c.value().get<std::size_t>();
        else if (c.key() == "n_heads") cfg.calibrator.n_heads = c.value().get<std::size_t>();
        else if (c.key() == "input_cap") cfg.calibrator.input_cap = c.value().get<std::size_t>();
        else throw std::invalid_argument("ModelConfig: unknown calibrator key '" + c.key() + "'");
      }
    } else {
      throw std::invalid_argument("ModelConfig: unknown key '" + key + "'");
    }
  }
  return cfg;
}

MixWeights MixTensors::values() const {
  return {alpha.item(), beta.item(), gamma.item()};
}

LongStoryModel::LongStoryModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t v = cfg_.vocab_size, d = cfg_.d_model;

  params_.create("embed.tok", v, d);
  params_.create("embed.pos", cfg_.max_seq_len, d);
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
    params_.create(p + "ffn.w1", d, cfg_.ffn_dim);
    params_.create(p + "ffn.bias1", 1, cfg_.ffn_dim);
    params_.create(p + "ffn.w2", cfg_.ffn_dim, d);
    params_.create(p + "ffn.bias2", 1, d);
  }
  params_.create("final_ln.gain", 1, d);
  params_.create("final_ln.bias", 1, d);
  params_.create("head.w", d, v);
  params_.create("head.bias", 1, v);

  params_.create("memory.gate_prev", d, d);
  params_.create("memory.gate_h", d, d);
  params_.create("memory.cand_prev", d, d);
  params_.create("memory.cand_h", d, d);
  params_.create("memory.init", 1, d);
  params_.create("cheating.null", 1, d);

  const std::size_t dc = cfg_.calibrator.d_model;
  params_.create("cal.embed.tok", v, dc);
  params_.create("cal.embed.pos", cfg_.calibrator.input_cap, dc);
  params_.create("cal.null_prev", 1, dc);
  for (std::size_t i = 0; i < cfg_.calibrator.n_layers; ++i) {
    const std::string p = "cal.layer" + std::to_string(i) + ".";
    params_.create(p + "attn.wq", dc, dc);
    params_.create(p + "attn.wk", dc, dc);
    params_.create(p + "attn.wv", dc, dc);
    params_.create(p + "attn.wo", dc, dc);
    params_.create(p + "ln1.gain", 1, dc);
    params_.create(p + "ln1.bias", 1, dc);
    params_.create(p + "ln2.gain", 1, dc);
    params_.create(p + "ln2.bias", 1, dc);
    params_.create(p + "ffn.w1", dc, dc * 4);
    params_.create(p + "ffn.bias1", 1, dc * 4);
    params_.create(p + "ffn.w2", dc * 4, dc);
    params_.create(p + "ffn.bias2", 1, dc);
  }
  params_.create("cal.final_ln.gain", 1, dc);
  params_.create("cal.final_ln.bias", 1, dc);
  params_.create("cal.pooler.w", dc, dc);
  params_.create("cal.pooler.bias", 1, dc);
  params_.create("cal.head_beta.w", dc, 1);
  params_.create("cal.head_beta.bias", 1, 1);
  if (cfg_.variant == Variant::kAugmented) {
    params_.create("cal.head_alpha.w", dc, 1);
    params_.create("cal.head_alpha.bias", 1, 1);
    params_.create("cal.head_gamma.w", dc, 1);
    params_.create("cal.head_gamma.bias", 1, 1);
  }

  // Deterministic init: iterate in name order so the layout of the store,
  // not creation order, fixes the stream of draws.
  Rng rng(cfg_.init_seed);
  for (const auto& [name, t] : params_.all()) {
    std::vector<double>& vdata = t.value();
    if (name.ends_with(".gain")) {
      std::fill(vdata.begin(), vdata.end(), 1.0);
    } else if (name.find(".bias") != std::string::npos) {
      std::fill(vdata.begin(), vdata.end(), 0.0);
    } else {
      for (auto& x : vdata) x = rng.normal(0.0, kInitStd);
    }
  }
}

Tensor LongStoryModel::attention(const Tensor& x, const std::string& prefix, std::size_t n_heads,
                                 const std::vector<std::uint8_t>* mask, const Tensor* memory,
                                 const Tensor* cheating, const MixTensors* mix) const {
  const std::size_t d = x.cols();
  const std::size_t dh = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = nn::matmul(x, params_.get(prefix + "attn.wq"));
  Tensor k = nn::matmul(x, params_.get(prefix + "attn.wk"));
  Tensor v = nn::matmul(x, params_.get(prefix + "attn.wv"));

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * dh, c1 = c0 + dh;
    Tensor qh = nn::slice_cols(q, c0, c1);
    Tensor kh = nn::slice_cols(k, c0, c1);
    Tensor vh = nn::slice_cols(v, c0, c1);
    Tensor scores = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_sqrt_dh);
    if (mask) scores = nn::masked_fill(scores, *mask, kMaskFill);
    Tensor self_out = nn::matmul(nn::softmax_rows(scores), vh);

    if (!mix) {
      heads.push_back(self_out);
      continue;
    }
    // Mixed block: the memory and cheating matrices act as key=value sets,
    // sliced per head but not projected; only Q keeps its projection.
    Tensor combined = nn::scale_by(self_out, mix->alpha);
    if (memory) {
      Tensor mh = nn::slice_cols(*memory, c0, c1);
      Tensor mscores = nn::scale(nn::matmul(qh, nn::transpose(mh)), inv_sqrt_dh);
      Tensor mem_out = nn::matmul(nn::softmax_rows(mscores), mh);
      combined = nn::add(combined, nn::scale_by(mem_out, mix->beta));
    }
    if (cheating) {
      Tensor ch = nn::slice_cols(*cheating, c0, c1);
      Tensor cscores = nn::scale(nn::matmul(qh, nn::transpose(ch)), inv_sqrt_dh);
      Tensor cheat_out = nn::matmul(nn::softmax_rows(cscores), ch);
      combined = nn::add(combined, nn::scale_by(cheat_out, mix->gamma));
    }
    heads.push_back(combined);
  }
  return nn::matmul(nn::concat_cols(heads), params_.get(prefix + "attn.wo"));
}

Tensor LongStoryModel::encoder_block(const Tensor& input, const std::string& prefix,
                                     std::size_t n_heads, const std::vector<std::uint8_t>* mask,
                                     const Tensor* memory, const Tensor* cheating,
                                     const MixTensors* mix) const {
  Tensor normed = nn::layer_norm(input, params_.get(prefix + "ln1.gain"),
                                 params_.get(prefix + "ln1.bias"));
  Tensor h = nn::add(input, attention(normed, prefix, n_heads, mask, memory, cheating, mix));
  Tensor normed2 =
      nn::layer_norm(h, params_.get(prefix + "ln2.gain"), params_.get(prefix + "ln2.bias"));
  Tensor ffn = nn::matmul(
      nn::tanh(nn::add(nn::matmul(normed2, params_.get(prefix + "ffn.w1")),
                       params_.get(prefix + "ffn.bias1"))),
      params_.get(prefix + "ffn.w2"));
  ffn = nn::add(ffn, params_.get(prefix + "ffn.bias2"));
  return nn::add(h, ffn);
}

MixTensors LongStoryModel::apply_variant(const Tensor& beta_raw, const Tensor& pooler) const {
  MixTensors mix;
  if (cfg_.variant == Variant::kAugmented) {
    auto head = [&](const std::string& name) {
      return nn::sigmoid(nn::add(nn::matmul(pooler, params_.get("cal." + name + ".w")),
                                 params_.get("cal." + name + ".bias")));
    };
    Tensor a = head("head_alpha");
    Tensor b = head("head_beta");
    Tensor c = head("head_gamma");
    Tensor inv_sum = nn::reciprocal(nn::add(nn::add(a, b), c));
    mix.alpha = nn::mul(a, inv_sum);
    mix.beta = nn::mul(b, inv_sum);
    mix.gamma = nn::mul(c, inv_sum);
    return mix;
  }
  const double alpha = cfg_.alpha;
  Tensor beta = nn::scale(beta_raw, 1.0 - alpha);
  Tensor gamma = nn::add(Tensor::scalar(1.0 - alpha), nn::scale(beta, -1.0));
  switch (cfg_.variant) {
    case Variant::kStandard:
      mix.alpha = Tensor::scalar(alpha);
      mix.beta = beta;
      mix.gamma = gamma;
      return mix;
    case Variant::kNoMemory: {
      // The removed path's weight is redistributed proportionally.
      Tensor inv = nn::reciprocal(nn::add(Tensor::scalar(alpha), gamma));
      mix.alpha = nn::scale(inv, alpha);
      mix.beta = Tensor::scalar(0.0);
      mix.gamma = nn::mul(gamma, inv);
      return mix;
    }
    case Variant::kNoCheating: {
      Tensor inv = nn::reciprocal(nn::add(Tensor::scalar(alpha), beta));
      mix.alpha = nn::scale(inv, alpha);
      mix.beta = nn::mul(beta, inv);
      mix.gamma = Tensor::scalar(0.0);
      return mix;
    }
    case Variant::kAugmented: break;
  }
  throw std::logic_error("apply_variant: unreachable");
}

CalibratorOutput LongStoryModel::calibrate(const std::vector<int>& discourse_ids,
                                           const std::vector<int>& prev_paragraph_ids) const {
  const std::size_t cap = cfg_.calibrator.input_cap;
  std::vector<int> head_ids;
  head_ids.push_back(tok::kCls);
  for (int id : discourse_ids) head_ids.push_back(id);
  head_ids.push_back(tok::kSep);
  if (head_ids.size() >= cap)
    throw std::invalid_argument("calibrate: discourse tokens exceed calibrator input cap");

  Tensor emb;
  const Tensor table = params_.get("cal.embed.tok");
  if (prev_paragraph_ids.empty()) {
    // t=1: a learned null row stands in for the missing previous paragraph.
    emb = nn::concat_rows({nn::embedding_lookup(table, head_ids), params_.get("cal.null_prev")});
  } else {
    std::vector<int> ids = head_ids;
    const std::size_t budget = cap - head_ids.size();
    const std::size_t take = std::min(budget, prev_paragraph_ids.size());
    ids.insert(ids.end(), prev_paragraph_ids.end() - static_cast<std::ptrdiff_t>(take),
               prev_paragraph_ids.end());
    emb = nn::embedding_lookup(table, ids);
  }
  const std::size_t len = emb.rows();
  Tensor h = nn::add(emb, nn::slice_rows(params_.get("cal.embed.pos"), 0, len));
  for (std::size_t i = 0; i < cfg_.calibrator.n_layers; ++i)
    h = encoder_block(h, "cal.layer" + std::to_string(i) + ".", cfg_.calibrator.n_heads,
                      nullptr, nullptr, nullptr, nullptr);
  h = nn::layer_norm(h, params_.get("cal.final_ln.gain"), params_.get("cal.final_ln.bias"));
  Tensor cls = nn::slice_rows(h, 0, 1);
  Tensor pooler = nn::tanh(
      nn::add(nn::matmul(cls, params_.get("cal.pooler.w")), params_.get("cal.pooler.bias")));
  Tensor beta_raw = nn::sigmoid(nn::add(nn::matmul(pooler, params_.get("cal.head_beta.w")),
                                        params_.get("cal.head_beta.bias")));
  CalibratorOutput out;
  out.pooler = pooler;
  out.mix = apply_variant(beta_raw, pooler);
  return out;
}

Tensor LongStoryModel::init_memory(const std::vector<int>& keyword_ids) const {
  const std::size_t m = cfg_.memory_slots;
  std::vector<Tensor> rows;
  const std::size_t n_kw = std::min(m, keyword_ids.size());
  if (n_kw > 0) {
    std::vector<int> ids(keyword_ids.begin(), keyword_ids.begin() + static_cast<std::ptrdiff_t>(n_kw));
    rows.push_back(nn::embedding_lookup(params_.get("embed.tok"), ids));
  }
  if (n_kw < m) {
    Tensor pad = nn::tanh(params_.get("memory.init"));
    for (std::size_t i = n_kw; i < m; ++i) rows.push_back(pad);
  }
  return nn::concat_rows(rows);
}

Tensor LongStoryModel::memory_update(const Tensor& m_prev, const Tensor& h_prev) const {
  if (m_prev.rows() != cfg_.memory_slots || m_prev.cols() != cfg_.d_model)
    throw std::invalid_argument("memory_update: memory is " + m_prev.shape_str() + ", expected [" +
                                std::to_string(cfg_.memory_slots) + " x " +
                                std::to_string(cfg_.d_model) + "]");
  Tensor gate = nn::sigmoid(nn::add(nn::matmul(m_prev, params_.get("memory.gate_prev")),
                                    nn::matmul(h_prev, params_.get("memory.gate_h"))));
  Tensor cand = nn::tanh(nn::add(nn::matmul(m_prev, params_.get("memory.cand_prev")),
                                 nn::matmul(h_prev, params_.get("memory.cand_h"))));
  Tensor keep = nn::add(Tensor::full(gate.rows(), gate.cols(), 1.0), nn::scale(gate, -1.0));
  return nn::add(nn::mul(keep, m_prev), nn::mul(gate, cand));
}

Tensor LongStoryModel::paragraph_mean_embedding(const std::vector<int>& ids) const {
  if (ids.empty()) throw std::invalid_argument("paragraph_mean_embedding: empty paragraph");
  return nn::mean_rows(nn::embedding_lookup(params_.get("embed.tok"), ids));
}

CheatingContext LongStoryModel::build_cheating(
    const std::vector<std::vector<int>>& prev_paragraphs) const {
  CheatingContext out;
  std::vector<int> flat;
  const std::size_t n = prev_paragraphs.size();
  const std::size_t first = n > kCheatingWindowParagraphs ? n - kCheatingWindowParagraphs : 0;
  for (std::size_t i = first; i < n; ++i) {
    if (!prev_paragraphs[i].empty()) out.source_window.push_back(static_cast<int>(i));
    flat.insert(flat.end(), prev_paragraphs[i].begin(), prev_paragraphs[i].end());
  }
  if (flat.empty()) {
    out.c = nn::tanh(params_.get("cheating.null"));
    out.source_window.clear();
    return out;
  }
  if (flat.size() > cfg_.cheating_token_budget)
    flat.erase(flat.begin(),
               flat.end() - static_cast<std::ptrdiff_t>(cfg_.cheating_token_budget));
  Tensor emb = nn::embedding_lookup(params_.get("embed.tok"), flat);
  Tensor pos = nn::slice_rows(params_.get("embed.pos"), 0, flat.size());
  out.c = nn::tanh(nn::add(emb, pos));
  return out;
}

Tensor LongStoryModel::forward_all_positions(const std::vector<int>& seq, std::size_t prefix_len,
                                             const Tensor& memory, const Tensor& cheating,
                                             const MixTensors& mix) const {
  const std::size_t len = seq.size();
  if (len == 0) throw std::invalid_argument("forward: empty sequence");
  if (len > cfg_.max_seq_len)
    throw std::invalid_argument("forward: sequence of " + std::to_string(len) +
                                " tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  const MixWeights w = mix.values();
  const double sum = w.alpha + w.beta + w.gamma;
  if (std::abs(sum - 1.0) > 1e-6 || w.alpha < 0 || w.beta < 0 || w.gamma < 0)
    throw std::invalid_argument("forward: mix weights off the simplex");

  // Prefix-LM mask: the conditioning prefix is mutually visible, the rest is
  // causal. mask[i*len+j] = 1 means "query i may not see key j".
  std::vector<std::uint8_t> mask(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j)
      if (j >= prefix_len && j > i) mask[i * len + j] = 1;

  const Tensor* mem = cfg_.variant == Variant::kNoMemory ? nullptr : &memory;
  const Tensor* cheat = cfg_.variant == Variant::kNoCheating ? nullptr : &cheating;

  Tensor h = nn::add(nn::embedding_lookup(params_.get("embed.tok"), seq),
                     nn::slice_rows(params_.get("embed.pos"), 0, len));
  for (std::size_t i = 0; i < cfg_.n_layers; ++i)
    h = encoder_block(h, "layer" + std::to_string(i) + ".", cfg_.n_heads, &mask, mem, cheat, &mix);
  h = nn::layer_norm(h, params_.get("final_ln.gain"), params_.get("final_ln.bias"));
  return nn::add(nn::matmul(h, params_.get("head.w")), params_.get("head.bias"));
}

Tensor LongStoryModel::forward(const std::vector<int>& x_ids, const std::vector<int>& y_ids,
                               const Tensor& memory, const Tensor& cheating,
                               const MixTensors& mix) const {
  if (y_ids.empty()) throw std::invalid_argument("forward: no target tokens");
  std::vector<int> seq = x_ids;
  seq.push_back(tok::kBos);
  seq.insert(seq.end(), y_ids.begin(), y_ids.end() - 1);
  const std::size_t prefix_len = x_ids.size() + 1;
  Tensor logits = forward_all_positions(seq, prefix_len, memory, cheating, mix);
  // Rows x_ids.size() .. end predict y_1..y_n.
  return nn::slice_rows(logits, x_ids.size(), seq.size());
}

Tensor LongStoryModel::lm_loss(const Tensor& logits, const std::vector<int>& targets) {
  return nn::cross_entropy_rows(logits, targets, tok::kPad);
}

}  // namespace longstory

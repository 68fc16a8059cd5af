#include "longstory/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "longstory/pipeline.hpp"

namespace longstory {

void GenerationConstraints::validate() const {
  if (top_k < 1) throw std::invalid_argument("GenerationConstraints: top_k must be >= 1");
  if (top_p <= 0.0 || top_p > 1.0)
    throw std::invalid_argument("GenerationConstraints: top_p must be in (0, 1]");
  if (repetition_penalty < 1.0)
    throw std::invalid_argument("GenerationConstraints: repetition_penalty must be >= 1");
  if (max_paragraph_tokens < 1)
    throw std::invalid_argument("GenerationConstraints: max_paragraph_tokens must be >= 1");
}

namespace {
// Logits at or below this are impossible tokens (suppressed specials); the
// filter treats them as banned rather than as live candidates.
constexpr double kImpossible = -1e29;
}  // namespace

std::vector<double> filter_logits(const std::vector<double>& logits,
                                  const std::vector<int>& history,
                                  const GenerationConstraints& constraints) {
  constraints.validate();
  const std::size_t vocab = logits.size();
  std::vector<double> work = logits;

  // (1) Repetition penalty: shrink toward zero probability for every token
  // already emitted in this paragraph.
  std::unordered_set<int> seen(history.begin(), history.end());
  for (int id : seen) {
    double& l = work[static_cast<std::size_t>(id)];
    l = l > 0.0 ? l / constraints.repetition_penalty : l * constraints.repetition_penalty;
  }

  // (2) No-repeat-ngram: ban any token that would complete an n-gram already
  // present in the history.
  std::vector<std::uint8_t> banned(vocab, 0);
  const std::size_t n = constraints.no_repeat_ngram;
  if (n > 0 && history.size() >= n - 1 && history.size() >= n) {
    for (std::size_t i = 0; i + n <= history.size(); ++i) {
      bool context_match = true;
      for (std::size_t j = 0; j + 1 < n; ++j) {
        if (history[i + j] != history[history.size() - (n - 1) + j]) {
          context_match = false;
          break;
        }
      }
      if (context_match) banned[static_cast<std::size_t>(history[i + n - 1])] = 1;
    }
  }

  struct Cand {
    int id;
    double logit;
  };
  std::vector<Cand> cands;
  cands.reserve(vocab);
  for (std::size_t id = 0; id < vocab; ++id)
    if (!banned[id] && work[id] > kImpossible) cands.push_back({static_cast<int>(id), work[id]});

  std::vector<double> out(vocab, 0.0);
  if (cands.empty()) {
    out[tok::kEos] = 1.0;  // everything banned: force termination
    return out;
  }

  // (3) Top-k: keep the k largest logits, ties to the smaller id.
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.logit != b.logit) return a.logit > b.logit;
    return a.id < b.id;
  });
  if (cands.size() > constraints.top_k) cands.resize(constraints.top_k);

  // (4) Softmax over survivors, then the smallest prefix with cumulative
  // mass >= top_p; renormalize.
  const double mx = cands[0].logit;
  std::vector<double> probs(cands.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    probs[i] = std::exp(cands[i].logit - mx);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
  std::size_t keep = cands.size();
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (cum >= constraints.top_p) {
      keep = i + 1;
      break;
    }
  }
  double kept_sum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_sum += probs[i];
  for (std::size_t i = 0; i < keep; ++i)
    out[static_cast<std::size_t>(cands[i].id)] = probs[i] / kept_sum;
  return out;
}

// ---------------------------------------------------------------------------
// DecodeSession
// ---------------------------------------------------------------------------

namespace {

void ln_row(const double* x, const double* gain, const double* bias, double* out, std::size_t n,
            double eps = 1e-5) {
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) out[j] = (x[j] - mean) * inv * gain[j] + bias[j];
}

// out[1 x n] = x[1 x d] * w[d x n]
void vecmat(const double* x, const double* w, double* out, std::size_t d, std::size_t n) {
  std::fill(out, out + n, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    const double* wrow = w + k * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xk * wrow[j];
  }
}

void softmax_inplace(std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

}  // namespace

struct DecodeSession::Impl {
  const LongStoryModel* model;
  ModelConfig cfg;
  std::vector<int> prefix;
  std::vector<double> memory;    // memory_slots x d
  std::vector<double> cheating;  // cheat_rows x d
  std::size_t cheat_rows;
  MixWeights mix;

  std::size_t d, dh, heads, ffn, layers, vocab;

  struct LayerW {
    const double *wq, *wk, *wv, *wo;
    const double *ln1g, *ln1b, *ln2g, *ln2b;
    const double *w1, *b1, *w2, *b2;
  };
  std::vector<LayerW> lw;
  const double *tok_emb, *pos_emb, *final_g, *final_b, *head_w, *head_b;

  std::vector<std::vector<double>> kcache, vcache;  // per layer, rows appended
  std::vector<double> logits;
  std::size_t pos = 0;
  bool primed = false;

  const double* p(const std::string& name) const {
    return model->params().get(name).value().data();
  }

  Impl(const LongStoryModel& m, std::vector<int> prefix_ids, const std::vector<double>& mem,
       const std::vector<double>& cheat, std::size_t cheat_rows_in, MixWeights mix_in)
      : model(&m),
        cfg(m.config()),
        prefix(std::move(prefix_ids)),
        memory(mem),
        cheating(cheat),
        cheat_rows(cheat_rows_in),
        mix(mix_in) {
    d = cfg.d_model;
    dh = d / cfg.n_heads;
    heads = cfg.n_heads;
    ffn = cfg.ffn_dim;
    layers = cfg.n_layers;
    vocab = cfg.vocab_size;
    const double sum = mix.alpha + mix.beta + mix.gamma;
    if (std::abs(sum - 1.0) > 1e-6 || mix.alpha < 0 || mix.beta < 0 || mix.gamma < 0)
      throw std::invalid_argument("DecodeSession: mix weights off the simplex");
    if (memory.size() != cfg.memory_slots * d)
      throw std::invalid_argument("DecodeSession: memory buffer has wrong size");
    if (cheating.size() != cheat_rows * d)
      throw std::invalid_argument("DecodeSession: cheating buffer has wrong size");
    for (std::size_t i = 0; i < layers; ++i) {
      const std::string pre = "layer" + std::to_string(i) + ".";
      lw.push_back({p(pre + "attn.wq"), p(pre + "attn.wk"), p(pre + "attn.wv"),
                    p(pre + "attn.wo"), p(pre + "ln1.gain"), p(pre + "ln1.bias"),
                    p(pre + "ln2.gain"), p(pre + "ln2.bias"), p(pre + "ffn.w1"),
                    p(pre + "ffn.bias1"), p(pre + "ffn.w2"), p(pre + "ffn.bias2")});
    }
    tok_emb = p("embed.tok");
    pos_emb = p("embed.pos");
    final_g = p("final_ln.gain");
    final_b = p("final_ln.bias");
    head_w = p("head.w");
    head_b = p("head.bias");
    kcache.assign(layers, {});
    vcache.assign(layers, {});
    logits.assign(vocab, 0.0);
  }

  // Mixed attention for one query row against this layer's cache plus the
  // fixed memory/cheating matrices; 'combined' receives the pre-Wo vector.
  void attend_row(std::size_t layer, const double* q, double* combined) const {
    const std::vector<double>& kc = kcache[layer];
    const std::vector<double>& vc = vcache[layer];
    const std::size_t rows = kc.size() / d;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> scores;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      double* out = combined + c0;
      std::fill(out, out + dh, 0.0);
      // self-attention over the cache
      scores.assign(rows, 0.0);
      for (std::size_t t = 0; t < rows; ++t) {
        const double* krow = kc.data() + t * d + c0;
        double acc = 0.0;
        for (std::size_t j = 0; j < dh; ++j) acc += q[c0 + j] * krow[j];
        scores[t] = acc * inv_sqrt;
      }
      softmax_inplace(scores);
      for (std::size_t t = 0; t < rows; ++t) {
        const double w = scores[t] * mix.alpha;
        const double* vrow = vc.data() + t * d + c0;
        for (std::size_t j = 0; j < dh; ++j) out[j] += w * vrow[j];
      }
      if (mix.beta != 0.0) {
        const std::size_t m = cfg.memory_slots;
        scores.assign(m, 0.0);
        for (std::size_t t = 0; t < m; ++t) {
          const double* mrow = memory.data() + t * d + c0;
          double acc = 0.0;
          for (std::size_t j = 0; j < dh; ++j) acc += q[c0 + j] * mrow[j];
          scores[t] = acc * inv_sqrt;
        }
        softmax_inplace(scores);
        for (std::size_t t = 0; t < m; ++t) {
          const double w = scores[t] * mix.beta;
          const double* mrow = memory.data() + t * d + c0;
          for (std::size_t j = 0; j < dh; ++j) out[j] += w * mrow[j];
        }
      }
      if (mix.gamma != 0.0) {
        scores.assign(cheat_rows, 0.0);
        for (std::size_t t = 0; t < cheat_rows; ++t) {
          const double* crow = cheating.data() + t * d + c0;
          double acc = 0.0;
          for (std::size_t j = 0; j < dh; ++j) acc += q[c0 + j] * crow[j];
          scores[t] = acc * inv_sqrt;
        }
        softmax_inplace(scores);
        for (std::size_t t = 0; t < cheat_rows; ++t) {
          const double w = scores[t] * mix.gamma;
          const double* crow = cheating.data() + t * d + c0;
          for (std::size_t j = 0; j < dh; ++j) out[j] += w * crow[j];
        }
      }
    }
  }

  void ffn_inplace(const LayerW& w, std::vector<double>& h) const {
    std::vector<double> normed(d), mid(ffn), back(d);
    ln_row(h.data(), w.ln2g, w.ln2b, normed.data(), d);
    vecmat(normed.data(), w.w1, mid.data(), d, ffn);
    for (std::size_t j = 0; j < ffn; ++j) mid[j] = std::tanh(mid[j] + w.b1[j]);
    vecmat(mid.data(), w.w2, back.data(), ffn, d);
    for (std::size_t j = 0; j < d; ++j) h[j] += back[j] + w.b2[j];
  }

  void final_logits(const std::vector<double>& h) {
    std::vector<double> normed(d);
    ln_row(h.data(), final_g, final_b, normed.data(), d);
    vecmat(normed.data(), head_w, logits.data(), d, vocab);
    for (std::size_t j = 0; j < vocab; ++j) logits[j] += head_b[j];
  }

  void prime() {
    const std::size_t plen = prefix.size();
    if (plen == 0) throw std::invalid_argument("DecodeSession: empty prefix");
    if (plen > cfg.max_seq_len)
      throw std::invalid_argument("DecodeSession: prefix exceeds max_seq_len");
    std::vector<double> h(plen * d);
    for (std::size_t i = 0; i < plen; ++i) {
      const int id = prefix[i];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab)
        throw std::out_of_range("DecodeSession: prefix token out of vocab");
      for (std::size_t j = 0; j < d; ++j)
        h[i * d + j] = tok_emb[static_cast<std::size_t>(id) * d + j] + pos_emb[i * d + j];
    }
    std::vector<double> normed(plen * d), q(plen * d), combined(d), attn(d);
    for (std::size_t l = 0; l < layers; ++l) {
      const LayerW& w = lw[l];
      for (std::size_t i = 0; i < plen; ++i)
        ln_row(h.data() + i * d, w.ln1g, w.ln1b, normed.data() + i * d, d);
      // Fill the caches first: the prefix is bidirectional, so every row must
      // see every other row's keys.
      kcache[l].resize(plen * d);
      vcache[l].resize(plen * d);
      for (std::size_t i = 0; i < plen; ++i) {
        vecmat(normed.data() + i * d, w.wk, kcache[l].data() + i * d, d, d);
        vecmat(normed.data() + i * d, w.wv, vcache[l].data() + i * d, d, d);
        vecmat(normed.data() + i * d, w.wq, q.data() + i * d, d, d);
      }
      for (std::size_t i = 0; i < plen; ++i) {
        attend_row(l, q.data() + i * d, combined.data());
        vecmat(combined.data(), w.wo, attn.data(), d, d);
        for (std::size_t j = 0; j < d; ++j) h[i * d + j] += attn[j];
      }
      for (std::size_t i = 0; i < plen; ++i) {
        std::vector<double> row(h.begin() + static_cast<std::ptrdiff_t>(i * d),
                                h.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        ffn_inplace(w, row);
        std::copy(row.begin(), row.end(), h.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
    }
    std::vector<double> last(h.end() - static_cast<std::ptrdiff_t>(d), h.end());
    final_logits(last);
    pos = plen;
    primed = true;
  }

  void step(int token_id) {
    if (!primed) throw std::logic_error("DecodeSession: step() before prime()");
    if (token_id < 0 || static_cast<std::size_t>(token_id) >= vocab)
      throw std::out_of_range("DecodeSession: token out of vocab");
    if (pos >= cfg.max_seq_len)
      throw std::invalid_argument("DecodeSession: sequence over max_seq_len");
    std::vector<double> h(d);
    for (std::size_t j = 0; j < d; ++j)
      h[j] = tok_emb[static_cast<std::size_t>(token_id) * d + j] + pos_emb[pos * d + j];
    std::vector<double> normed(d), q(d), combined(d), attn(d);
    for (std::size_t l = 0; l < layers; ++l) {
      const LayerW& w = lw[l];
      ln_row(h.data(), w.ln1g, w.ln1b, normed.data(), d);
      const std::size_t off = kcache[l].size();
      kcache[l].resize(off + d);
      vcache[l].resize(off + d);
      vecmat(normed.data(), w.wk, kcache[l].data() + off, d, d);
      vecmat(normed.data(), w.wv, vcache[l].data() + off, d, d);
      vecmat(normed.data(), w.wq, q.data(), d, d);
      attend_row(l, q.data(), combined.data());
      vecmat(combined.data(), w.wo, attn.data(), d, d);
      for (std::size_t j = 0; j < d; ++j) h[j] += attn[j];
      ffn_inplace(w, h);
    }
    final_logits(h);
    ++pos;
  }
};

DecodeSession::DecodeSession(const LongStoryModel& model, std::vector<int> prefix_ids,
                             const std::vector<double>& memory,
                             const std::vector<double>& cheating, std::size_t cheating_rows,
                             MixWeights mix)
    : impl_(std::make_unique<Impl>(model, std::move(prefix_ids), memory, cheating, cheating_rows,
                                   mix)) {}

DecodeSession::~DecodeSession() = default;
DecodeSession::DecodeSession(DecodeSession&&) noexcept = default;
DecodeSession& DecodeSession::operator=(DecodeSession&&) noexcept = default;

const std::vector<double>& DecodeSession::prime() {
  impl_->prime();
  return impl_->logits;
}

const std::vector<double>& DecodeSession::step(int token_id) {
  impl_->step(token_id);
  return impl_->logits;
}

// ---------------------------------------------------------------------------
// paragraph and story generation
// ---------------------------------------------------------------------------

namespace {

// Structural tokens are never sampled into story text; EOS stays available so
// paragraphs can terminate themselves.
void suppress_structural(std::vector<double>& logits) {
  constexpr double kSuppressed = -1e30;
  logits[tok::kPad] = kSuppressed;
  logits[tok::kBos] = kSuppressed;
  logits[tok::kSep] = kSuppressed;
  logits[tok::kCls] = kSuppressed;
  for (int id = tok::kFirstDiscourseId; id < tok::kFirstDiscourseId + tok::kNumDiscourse; ++id)
    logits[static_cast<std::size_t>(id)] = kSuppressed;
}

int sample_from(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform01();
  double cum = 0.0;
  int last_positive = -1;
  for (std::size_t id = 0; id < probs.size(); ++id) {
    if (probs[id] <= 0.0) continue;
    cum += probs[id];
    last_positive = static_cast<int>(id);
    if (u < cum) return last_positive;
  }
  if (last_positive < 0) throw std::logic_error("sample_from: empty distribution");
  return last_positive;  // guards rounding at the tail
}

}  // namespace

std::vector<int> generate_paragraph(const LongStoryModel& model, const std::vector<int>& x_ids,
                                    const nn::Tensor& memory, const nn::Tensor& cheating,
                                    const MixWeights& mix, const GenerationConstraints& constraints,
                                    Rng& rng) {
  constraints.validate();
  std::vector<int> prefix = x_ids;
  prefix.push_back(tok::kBos);
  DecodeSession session(model, prefix, memory.value(), cheating.value(), cheating.rows(), mix);
  std::vector<double> logits = session.prime();
  std::vector<int> tokens;
  const std::size_t room = model.config().max_seq_len - std::min(model.config().max_seq_len,
                                                                 prefix.size());
  const std::size_t budget = std::min(constraints.max_paragraph_tokens, room);
  while (tokens.size() < budget) {
    suppress_structural(logits);
    const std::vector<double> probs = filter_logits(logits, tokens, constraints);
    const int id = sample_from(probs, rng);
    if (id == tok::kEos) break;
    tokens.push_back(id);
    if (tokens.size() >= budget) break;
    logits = session.step(id);
  }
  return tokens;
}

StoryRollout generate_story(const LongStoryModel& model, const tok::Vocabulary& vocab,
                            const std::vector<std::string>& keywords, std::size_t paragraph_count,
                            const GenerationConstraints& constraints,
                            const tok::ModelInputOptions& input_opts) {
  if (paragraph_count < 1) throw std::invalid_argument("generate_story: paragraph count must be >= 1");
  if (keywords.empty()) throw std::invalid_argument("generate_story: no keywords");
  constraints.validate();
  Rng rng(constraints.seed);
  StoryRollout rollout;
  std::vector<std::vector<int>> generated;

  nn::Tensor memory_carry =
      nn::detach(model.init_memory(tok::keyword_token_ids(vocab, keywords)));

  for (std::size_t t = 1; t <= paragraph_count; ++t) {
    std::vector<std::string> names = text::assign_discourse(t, paragraph_count);
    std::vector<int> discourse_ids;
    std::vector<std::string> used_names;
    for (const auto& name : names) {
      const int id = tok::discourse_id(name);
      if (input_opts.strip_new_discourse && tok::is_new_discourse_token(id)) continue;
      discourse_ids.push_back(id);
      used_names.push_back(name);
    }
    const std::vector<int> x_ids = tok::build_model_input(vocab, keywords, names, input_opts);

    static const std::vector<int> kNoPrev;
    const std::vector<int>& prev = t > 1 ? generated.back() : kNoPrev;
    CalibratorOutput calib = model.calibrate(discourse_ids, prev);
    const MixWeights mix = calib.mix.values();

    if (t > 1 && !prev.empty())
      memory_carry =
          nn::detach(model.memory_update(memory_carry, model.paragraph_mean_embedding(prev)));
    CheatingContext cheating = model.build_cheating(generated);

    std::vector<int> ids = generate_paragraph(model, x_ids, memory_carry,
                                              nn::detach(cheating.c), mix, constraints, rng);
    rollout.paragraphs.push_back(vocab.decode(ids));
    rollout.token_counts.push_back(ids.size());
    rollout.mix.push_back(mix);
    rollout.discourse.push_back(used_names);
    rollout.paragraph_ids.push_back(ids);
    generated.push_back(std::move(ids));
  }
  return rollout;
}

}  // namespace longstory

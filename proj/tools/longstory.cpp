// Command-line entry point wiring the pipeline:
//   synth -> prepare -> build-vocab -> train -> generate -> evaluate / ablate
// plus train-scorers and grad-check. Every subcommand takes --config <json>
// whose keys match the long flag names; explicit flags win over the file.
// Errors exit nonzero with a machine-readable JSON object on stderr.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "longstory/checkpoint.hpp"
#include "longstory/generator.hpp"
#include "longstory/gradcheck.hpp"
#include "longstory/metrics.hpp"
#include "longstory/model.hpp"
#include "longstory/pipeline.hpp"
#include "longstory/report.hpp"
#include "longstory/rng.hpp"
#include "longstory/scorer.hpp"
#include "longstory/synth.hpp"
#include "longstory/text.hpp"
#include "longstory/trainer.hpp"
#include "longstory/vocab.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
namespace tok = longstory::tok;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Merges a JSON config file under the parsed flags: file keys are long flag
// names, unknown keys are rejected, explicitly passed flags take precedence.
class ConfigMerge {
 public:
  explicit ConfigMerge(CLI::App* sub) : sub_(sub) {
    sub->add_option("--config", config_path_, "JSON config file (flags override it)");
  }

  template <typename T>
  void bind(const std::string& flag, T* target) {
    setters_[flag] = [target](const json& v) { *target = v.get<T>(); };
  }

  void apply() {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw std::runtime_error("cannot open config file " + config_path_);
    json j = json::parse(in);
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto setter = setters_.find(it.key());
      if (setter == setters_.end())
        throw std::runtime_error("unknown config key '" + it.key() + "'");
      if (sub_->count("--" + it.key()) > 0) continue;  // flag wins
      setter->second(it.value());
    }
  }

 private:
  CLI::App* sub_;
  std::string config_path_;
  std::map<std::string, std::function<void(const json&)>> setters_;
};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!longstory::text::trim(cur).empty()) parts.push_back(longstory::text::trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!longstory::text::trim(cur).empty()) parts.push_back(longstory::text::trim(cur));
  return parts;
}

longstory::text::SplitSpec parse_split(const std::string& s, std::uint64_t seed) {
  const auto parts = split_list(s, ',');
  if (parts.size() != 3)
    throw std::runtime_error("--split expects three comma-separated fractions, got '" + s + "'");
  longstory::text::SplitSpec spec;
  spec.train_fraction = std::stod(parts[0]);
  spec.valid_fraction = std::stod(parts[1]);
  spec.test_fraction = std::stod(parts[2]);
  spec.seed = seed;
  spec.validate();
  return spec;
}

ordered_json story_to_json(const longstory::StoryRollout& rollout, const std::string& id,
                           const ordered_json& config_echo) {
  ordered_json j;
  if (!id.empty()) j["id"] = id;
  j["paragraphs"] = rollout.paragraphs;
  ordered_json mix = ordered_json::array();
  for (const auto& m : rollout.mix) mix.push_back({m.alpha, m.beta, m.gamma});
  j["mix_weights"] = mix;
  j["discourse"] = rollout.discourse;
  j["token_counts"] = rollout.token_counts;
  j["config"] = config_echo;
  return j;
}

longstory::GenerationConstraints make_constraints(std::size_t top_k, double top_p,
                                                  std::size_t no_repeat_ngram, double penalty,
                                                  std::size_t max_tokens, std::uint64_t seed) {
  longstory::GenerationConstraints c;
  c.top_k = top_k;
  c.top_p = top_p;
  c.no_repeat_ngram = no_repeat_ngram;
  c.repetition_penalty = penalty;
  c.max_paragraph_tokens = max_tokens;
  c.seed = seed;
  c.validate();
  return c;
}

tok::ModelInputOptions input_options_from_bundle(const longstory::ModelBundle& bundle) {
  tok::ModelInputOptions opts;
  auto meta = json::parse(bundle.metadata_json);
  if (meta.contains("extra") && meta["extra"].contains("train_config")) {
    const auto& tc = meta["extra"]["train_config"];
    if (tc.contains("input_cap")) opts.input_cap = tc["input_cap"].get<std::size_t>();
    if (tc.contains("strip_new_discourse"))
      opts.strip_new_discourse = tc["strip_new_discourse"].get<bool>();
  }
  return opts;
}

// ---- subcommand runners ----

int run_synth(const std::string& out, std::size_t size, std::size_t vocab_size,
              std::uint64_t seed, std::size_t min_p, std::size_t max_p) {
  longstory::synth::SynthOptions opts;
  opts.size = size;
  opts.vocab_size = vocab_size;
  opts.seed = seed;
  opts.min_paragraphs = min_p;
  opts.max_paragraphs = max_p;
  const auto docs = longstory::synth::synth_corpus(opts);
  longstory::synth::write_documents_jsonl(docs, out);
  ordered_json echo{{"out", out},
                    {"size", size},
                    {"vocab-size", vocab_size},
                    {"seed", seed},
                    {"min-paragraphs", min_p},
                    {"max-paragraphs", max_p}};
  write_text_file(out + ".manifest.json",
                  ordered_json{{"config", echo}, {"documents", docs.size()}}.dump() + "\n");
  std::cout << "wrote " << docs.size() << " documents to " << out << "\n";
  return 0;
}

int run_prepare(const std::string& input, const std::string& out_dir, std::size_t cap,
                std::size_t keywords, const std::string& split, std::uint64_t seed, int threads) {
  const auto docs = longstory::text::read_documents_jsonl(input);
  longstory::text::PrepareOptions opts;
  opts.paragraph_cap = cap;
  opts.keyword_top_k = keywords;
  opts.split = parse_split(split, seed);
  opts.threads = threads;
  const auto corpus = longstory::text::prepare_corpus(docs, opts);
  fs::create_directories(out_dir);
  longstory::text::write_prepared_jsonl(corpus.train, out_dir + "/train.jsonl");
  longstory::text::write_prepared_jsonl(corpus.valid, out_dir + "/valid.jsonl");
  longstory::text::write_prepared_jsonl(corpus.test, out_dir + "/test.jsonl");
  ordered_json echo{{"input", input},       {"out-dir", out_dir}, {"cap", cap},
                    {"keywords", keywords}, {"split", split},     {"seed", seed},
                    {"threads", threads}};
  ordered_json manifest{{"config", echo},
                        {"train", corpus.train.size()},
                        {"valid", corpus.valid.size()},
                        {"test", corpus.test.size()},
                        {"dropped", corpus.dropped_ids}};
  write_text_file(out_dir + "/manifest.json", manifest.dump() + "\n");
  std::cout << "prepared " << corpus.train.size() << "/" << corpus.valid.size() << "/"
            << corpus.test.size() << " train/valid/test documents\n";
  return 0;
}

int run_build_vocab(const std::string& input, std::size_t max_size, std::size_t min_freq,
                    const std::string& out) {
  const auto docs = longstory::text::read_prepared_jsonl(input);
  const auto vocab = tok::Vocabulary::build(docs, max_size, min_freq);
  vocab.save(out);
  ordered_json echo{{"input", input}, {"max-size", max_size}, {"min-freq", min_freq}, {"out", out}};
  write_text_file(out + ".manifest.json",
                  ordered_json{{"config", echo}, {"vocab_size", vocab.size()}}.dump() + "\n");
  std::cout << "vocabulary of " << vocab.size() << " tokens written to " << out << "\n";
  return 0;
}

int run_train(const std::string& corpus_dir, const std::string& vocab_path,
              const std::string& model_config_path, const std::string& train_config_path,
              const std::string& variant, const std::string& out_dir, std::uint64_t seed,
              const std::string& resume, const std::string& precision, std::size_t max_steps,
              std::size_t epochs) {
  const auto train_docs = longstory::text::read_prepared_jsonl(corpus_dir + "/train.jsonl");
  std::vector<longstory::text::PreparedDocument> valid_docs;
  if (fs::exists(corpus_dir + "/valid.jsonl"))
    valid_docs = longstory::text::read_prepared_jsonl(corpus_dir + "/valid.jsonl");

  auto read_file = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };

  longstory::TrainConfig tcfg;
  if (!train_config_path.empty())
    tcfg = longstory::TrainConfig::from_json(read_file(train_config_path));
  tcfg.seed = seed;
  tcfg.checkpoint_dir = out_dir;
  if (max_steps != 0) tcfg.max_steps = max_steps;
  if (epochs != 0) tcfg.epochs = epochs;

  std::shared_ptr<longstory::LongStoryModel> model;
  tok::Vocabulary vocab;
  longstory::ModelBundle bundle;
  if (!resume.empty()) {
    bundle = longstory::load_model(resume);
    model = bundle.model;
    vocab = bundle.vocab;
    auto meta = json::parse(bundle.metadata_json);
    tcfg = longstory::TrainConfig::from_json(meta.at("extra").at("train_config").dump());
    tcfg.checkpoint_dir = out_dir;
    if (max_steps != 0) tcfg.max_steps = max_steps;
    if (epochs != 0) tcfg.epochs = epochs;
  } else {
    longstory::ModelConfig mcfg;
    if (!model_config_path.empty())
      mcfg = longstory::ModelConfig::from_json(read_file(model_config_path));
    if (variant == "no_new_discourse") {
      mcfg.variant = longstory::Variant::kStandard;
      tcfg.input.strip_new_discourse = true;
    } else {
      mcfg.variant = longstory::variant_from_string(variant);
    }
    mcfg.init_seed = seed;
    vocab = tok::Vocabulary::load(vocab_path);
    mcfg.vocab_size = vocab.size();
    model = std::make_shared<longstory::LongStoryModel>(mcfg);
  }

  longstory::Trainer trainer(*model, vocab, tcfg);
  if (!resume.empty()) trainer.restore(bundle);
  const auto report = trainer.fit(train_docs, valid_docs);
  fs::create_directories(out_dir);
  trainer.save_checkpoint_file(out_dir + "/final.ckpt", precision);
  ordered_json echo{{"corpus", corpus_dir},
                    {"vocab", vocab_path},
                    {"variant", variant},
                    {"out-dir", out_dir},
                    {"seed", seed},
                    {"precision", precision},
                    {"resume", resume},
                    {"train_config", json::parse(tcfg.to_json())},
                    {"model_config", json::parse(model->config().to_json())}};
  ordered_json rj = ordered_json::parse(report.to_json());
  rj["config"] = echo;
  write_text_file(out_dir + "/report.json", rj.dump() + "\n");
  std::cout << "trained " << report.steps << " steps; valid loss " << report.initial_valid_loss
            << " -> " << report.final_valid_loss << "\n";
  return 0;
}

int run_generate(const std::string& checkpoint, const std::string& keywords_arg,
                 std::size_t paragraphs, std::uint64_t seed, const std::string& out,
                 std::size_t top_k, double top_p, std::size_t no_repeat_ngram, double penalty,
                 std::size_t max_tokens, const std::string& id) {
  const auto bundle = longstory::load_model(checkpoint);
  const auto keywords = split_list(keywords_arg, ';');
  if (keywords.empty()) throw std::runtime_error("--keywords is empty");
  const auto constraints =
      make_constraints(top_k, top_p, no_repeat_ngram, penalty, max_tokens, seed);
  const auto input_opts = input_options_from_bundle(bundle);
  const auto rollout = longstory::generate_story(*bundle.model, bundle.vocab, keywords, paragraphs,
                                                 constraints, input_opts);
  ordered_json echo{{"checkpoint", checkpoint},
                    {"keywords", keywords_arg},
                    {"paragraphs", paragraphs},
                    {"seed", seed},
                    {"top-k", top_k},
                    {"top-p", top_p},
                    {"no-repeat-ngram", no_repeat_ngram},
                    {"repetition-penalty", penalty},
                    {"max-paragraph-tokens", max_tokens},
                    {"strip_new_discourse", input_opts.strip_new_discourse}};
  write_text_file(out, story_to_json(rollout, id, echo).dump() + "\n");
  std::cout << "wrote " << rollout.paragraphs.size() << " paragraphs to " << out << "\n";
  return 0;
}

int run_train_scorers(const std::string& train_path, const std::string& eval_path,
                      const std::string& vocab_path, const std::string& out_dir,
                      std::uint64_t seed, std::size_t epochs, std::size_t d_model,
                      std::size_t n_layers) {
  const auto train_docs = longstory::text::read_prepared_jsonl(train_path);
  const auto eval_docs = longstory::text::read_prepared_jsonl(eval_path);
  const auto vocab = tok::Vocabulary::load(vocab_path);
  fs::create_directories(out_dir);
  ordered_json manifest;
  for (const auto kind : {longstory::metrics::ScorerKind::kCoherence,
                          longstory::metrics::ScorerKind::kCompleteness}) {
    const bool coherence = kind == longstory::metrics::ScorerKind::kCoherence;
    const std::string name = coherence ? "coherence" : "completeness";
    longstory::metrics::ScorerConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = d_model;
    cfg.n_layers = n_layers;
    cfg.epochs = epochs;
    cfg.init_seed = seed;
    cfg.shuffle_seed = seed + 1;
    longstory::metrics::Scorer scorer(cfg, kind);
    const auto train_set = longstory::metrics::build_scorer_data(train_docs, kind, seed + 2);
    const auto eval_set = longstory::metrics::build_scorer_data(eval_docs, kind, seed + 3);
    const auto report = scorer.train(train_set, eval_set, vocab);
    scorer.save(out_dir + "/" + name + ".ckpt", vocab);
    manifest[name] = {{"held_out_accuracy", report.held_out_accuracy},
                      {"final_train_loss", report.final_train_loss},
                      {"steps", report.steps}};
    std::cout << name << " scorer: held-out accuracy " << report.held_out_accuracy << "\n";
  }
  manifest["config"] = ordered_json{{"train", train_path}, {"eval", eval_path},
                                    {"vocab", vocab_path}, {"out-dir", out_dir},
                                    {"seed", seed},        {"epochs", epochs},
                                    {"d-model", d_model},  {"layers", n_layers}};
  write_text_file(out_dir + "/manifest.json", manifest.dump() + "\n");
  return 0;
}

std::map<std::string, std::vector<std::string>> labels_from_prepared(const std::string& path) {
  std::map<std::string, std::vector<std::string>> labels;
  for (const auto& doc : longstory::text::read_prepared_jsonl(path)) labels[doc.id] = doc.paragraphs;
  return labels;
}

int run_evaluate(const std::string& stories_dir, const std::string& labels_path,
                 const std::string& scorers_dir, const std::string& out) {
  std::vector<longstory::metrics::StoryForEval> stories;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(stories_dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    json j = json::parse(in);
    longstory::metrics::StoryForEval s;
    s.id = j.value("id", f.stem().string());
    s.paragraphs = j.at("paragraphs").get<std::vector<std::string>>();
    stories.push_back(std::move(s));
  }
  if (stories.empty()) throw std::runtime_error("no .json stories found in " + stories_dir);

  std::map<std::string, std::vector<std::string>> labels;
  if (!labels_path.empty()) labels = labels_from_prepared(labels_path);

  std::optional<longstory::metrics::Scorer> coherence, completeness;
  tok::Vocabulary scorer_vocab;
  if (!scorers_dir.empty()) {
    coherence = longstory::metrics::Scorer::load(scorers_dir + "/coherence.ckpt", &scorer_vocab);
    completeness = longstory::metrics::Scorer::load(scorers_dir + "/completeness.ckpt");
  }
  const auto summary = longstory::metrics::evaluate_stories(
      stories, labels, coherence ? &*coherence : nullptr, completeness ? &*completeness : nullptr,
      scorers_dir.empty() ? nullptr : &scorer_vocab);
  ordered_json rj = ordered_json::parse(summary.to_json());
  rj["config"] = ordered_json{{"stories", stories_dir},
                              {"labels", labels_path},
                              {"scorers", scorers_dir},
                              {"out", out}};
  write_text_file(out, rj.dump() + "\n");
  std::cout << "evaluated " << stories.size() << " stories (" << summary.matched_labels
            << " with labels) -> " << out << "\n";
  return 0;
}

int run_ablate(const std::string& checkpoints_arg, const std::string& prepared_path,
               const std::string& counts_arg, std::size_t stories_per_count, std::uint64_t seed,
               const std::string& scorers_dir, const std::string& out) {
  // --checkpoints standard=a.ckpt,no_memory=b.ckpt,...
  std::map<std::string, std::string> variant_paths;
  for (const auto& part : split_list(checkpoints_arg, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--checkpoints entries must be variant=path, got '" + part + "'");
    variant_paths[part.substr(0, eq)] = part.substr(eq + 1);
  }
  static const std::vector<std::string> kRequired = {"standard", "no_memory", "no_cheating",
                                                     "no_new_discourse"};
  std::vector<std::string> missing;
  for (const auto& v : kRequired)
    if (!variant_paths.count(v)) missing.push_back(v);
  if (!missing.empty())
    throw std::runtime_error("missing checkpoints for variants: " +
                             longstory::text::join(missing, ", "));

  const auto docs = longstory::text::read_prepared_jsonl(prepared_path);
  if (docs.empty()) throw std::runtime_error("no documents in " + prepared_path);
  std::vector<std::size_t> counts;
  for (const auto& c : split_list(counts_arg, ',')) counts.push_back(std::stoul(c));

  std::optional<longstory::metrics::Scorer> coherence, completeness;
  tok::Vocabulary scorer_vocab;
  if (!scorers_dir.empty()) {
    coherence = longstory::metrics::Scorer::load(scorers_dir + "/coherence.ckpt", &scorer_vocab);
    completeness = longstory::metrics::Scorer::load(scorers_dir + "/completeness.ckpt");
  }

  std::map<std::string, std::vector<std::string>> labels;
  for (const auto& d : docs) labels[d.id] = d.paragraphs;

  ordered_json rows = ordered_json::array();
  for (const auto& [variant, path] : variant_paths) {
    longstory::ModelBundle bundle;
    try {
      bundle = longstory::load_model(path);
    } catch (const std::exception& e) {
      throw std::runtime_error("variant '" + variant + "': " + e.what());
    }
    const auto input_opts = input_options_from_bundle(bundle);
    for (std::size_t t_count : counts) {
      std::vector<longstory::metrics::StoryForEval> stories;
      double mix_alpha = 0, mix_beta = 0, mix_gamma = 0;
      std::size_t mix_n = 0;
      for (std::size_t s = 0; s < stories_per_count; ++s) {
        const auto& doc = docs[s % docs.size()];
        auto constraints = make_constraints(50, 0.95, 3, 3.5, 200, seed + s);
        const auto rollout = longstory::generate_story(*bundle.model, bundle.vocab, doc.keywords,
                                                       t_count, constraints, input_opts);
        stories.push_back({doc.id, rollout.paragraphs});
        for (const auto& m : rollout.mix) {
          mix_alpha += m.alpha;
          mix_beta += m.beta;
          mix_gamma += m.gamma;
          ++mix_n;
        }
      }
      const auto summary = longstory::metrics::evaluate_stories(
          stories, labels, coherence ? &*coherence : nullptr,
          completeness ? &*completeness : nullptr, scorers_dir.empty() ? nullptr : &scorer_vocab);
      ordered_json row = ordered_json::parse(summary.to_json());
      row["variant"] = variant;
      row["paragraphs"] = t_count;
      row["mean_mix"] = {mix_alpha / static_cast<double>(mix_n),
                         mix_beta / static_cast<double>(mix_n),
                         mix_gamma / static_cast<double>(mix_n)};
      rows.push_back(row);
    }
  }
  ordered_json rj;
  rj["rows"] = rows;
  rj["config"] = ordered_json{{"checkpoints", checkpoints_arg},
                              {"prepared", prepared_path},
                              {"paragraph-counts", counts_arg},
                              {"stories-per-count", stories_per_count},
                              {"seed", seed},
                              {"scorers", scorers_dir}};
  write_text_file(out, rj.dump() + "\n");
  std::cout << "ablation report with " << rows.size() << " rows -> " << out << "\n";
  return 0;
}

int run_grad_check(std::size_t d_model, std::size_t n_layers, std::size_t n_heads,
                   std::size_t memory_slots, std::size_t vocab_size, double epsilon,
                   double tolerance, std::uint64_t seed, std::size_t max_elements) {
  longstory::ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = d_model;
  cfg.n_layers = n_layers;
  cfg.n_heads = n_heads;
  cfg.ffn_dim = d_model * 2;
  cfg.memory_slots = memory_slots;
  cfg.cheating_token_budget = 32;
  cfg.max_seq_len = 128;
  cfg.calibrator.d_model = d_model;
  cfg.calibrator.n_layers = 1;
  cfg.calibrator.n_heads = n_heads;
  cfg.calibrator.input_cap = 64;
  cfg.init_seed = seed;
  longstory::LongStoryModel model(cfg);

  // A tiny synthetic vocabulary and a three-paragraph document covering the
  // memory, cheating and calibrator paths.
  tok::Vocabulary vocab;
  {
    std::vector<longstory::text::PreparedDocument> seed_docs(1);
    std::string words;
    for (std::size_t i = 0; i + tok::kNumSpecials < vocab_size; ++i)
      words += "w" + std::to_string(i) + " ";
    seed_docs[0].paragraphs.push_back(words);
    seed_docs[0].keywords.push_back("w0");
    vocab = tok::Vocabulary::build(seed_docs, vocab_size, 1);
  }
  longstory::text::PreparedDocument doc;
  doc.id = "gradcheck";
  doc.keywords = {"w1 w2", "w3"};
  longstory::Rng rng(seed + 1);
  for (std::size_t t = 1; t <= 3; ++t) {
    std::vector<std::string> words;
    for (int i = 0; i < 8; ++i)
      words.push_back("w" + std::to_string(rng.below(vocab_size - tok::kNumSpecials)));
    doc.paragraphs.push_back(longstory::text::join(words, " "));
    doc.discourse.push_back(longstory::text::assign_discourse(t, 3));
  }

  auto document_loss = [&]() -> longstory::nn::Tensor {
    // Mirrors the trainer's teacher-forced pass but returns one summed tensor.
    std::vector<std::vector<int>> gold;
    for (const auto& p : doc.paragraphs) gold.push_back(vocab.encode(p));
    longstory::nn::Tensor memory_carry;
    std::vector<std::vector<int>> prev_paragraphs;
    longstory::nn::Tensor total = longstory::nn::Tensor::scalar(0.0);
    for (std::size_t t = 1; t <= doc.paragraphs.size(); ++t) {
      std::vector<int> discourse_ids;
      for (const auto& name : doc.discourse[t - 1])
        discourse_ids.push_back(tok::discourse_id(name));
      const auto x_ids = tok::build_model_input(vocab, doc.keywords, doc.discourse[t - 1]);
      static const std::vector<int> kNoPrev;
      const std::vector<int>& prev = t > 1 ? gold[t - 2] : kNoPrev;
      auto calib = model.calibrate(discourse_ids, prev);
      longstory::nn::Tensor memory =
          t == 1 ? model.init_memory(tok::keyword_token_ids(vocab, doc.keywords))
                 : model.memory_update(memory_carry, model.paragraph_mean_embedding(prev));
      auto cheating = model.build_cheating(prev_paragraphs);
      std::vector<int> targets = gold[t - 1];
      targets.push_back(tok::kEos);
      auto logits = model.forward(x_ids, targets, memory, cheating.c, calib.mix);
      total = longstory::nn::add(total, longstory::LongStoryModel::lm_loss(logits, targets));
      memory_carry = longstory::nn::detach(memory);
      prev_paragraphs.push_back(gold[t - 1]);
    }
    return total;
  };

  std::vector<longstory::nn::Parameter> params;
  for (const auto& [name, t] : model.params().all()) params.push_back({name, t});
  const auto report =
      longstory::nn::grad_check(document_loss, params, epsilon, tolerance, max_elements);
  std::cout << report.to_string();
  return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longstory: recursive long-story generator toolkit"};
  app.require_subcommand(1);
  std::string active;

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a planted synthetic corpus");
  std::string synth_out = "corpus.jsonl";
  std::size_t synth_size = 200, synth_vocab = 500, synth_minp = 3, synth_maxp = 8;
  std::uint64_t synth_seed = 1;
  {
    auto cm = std::make_shared<ConfigMerge>(synth);
    synth->add_option("--out", synth_out, "output corpus JSONL");
    synth->add_option("--size", synth_size, "number of documents");
    synth->add_option("--vocab-size", synth_vocab, "pseudo-word pool size");
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--min-paragraphs", synth_minp, "min paragraphs per story");
    synth->add_option("--max-paragraphs", synth_maxp, "max paragraphs per story");
    cm->bind("out", &synth_out);
    cm->bind("size", &synth_size);
    cm->bind("vocab-size", &synth_vocab);
    cm->bind("seed", &synth_seed);
    cm->bind("min-paragraphs", &synth_minp);
    cm->bind("max-paragraphs", &synth_maxp);
    synth->callback([&, cm]() {
      active = "synth";
      cm->apply();
      run_synth(synth_out, synth_size, synth_vocab, synth_seed, synth_minp, synth_maxp);
    });
  }

  // ---- prepare ----
  auto* prepare = app.add_subcommand("prepare", "segment, pack, extract keywords, split");
  std::string prep_input, prep_out_dir = "prepared", prep_split = "0.8,0.1,0.1";
  std::size_t prep_cap = 200, prep_keywords = 10;
  std::uint64_t prep_seed = 0;
  int prep_threads = 1;
  {
    auto cm = std::make_shared<ConfigMerge>(prepare);
    prepare->add_option("--input", prep_input, "corpus JSONL ({id, text} per line)");
    prepare->add_option("--out-dir", prep_out_dir, "output directory");
    prepare->add_option("--cap", prep_cap, "max tokens per paragraph");
    prepare->add_option("--keywords", prep_keywords, "RAKE keywords per story");
    prepare->add_option("--split", prep_split, "train,valid,test fractions");
    prepare->add_option("--seed", prep_seed, "shuffle seed");
    prepare->add_option("--threads", prep_threads, "worker threads");
    cm->bind("input", &prep_input);
    cm->bind("out-dir", &prep_out_dir);
    cm->bind("cap", &prep_cap);
    cm->bind("keywords", &prep_keywords);
    cm->bind("split", &prep_split);
    cm->bind("seed", &prep_seed);
    cm->bind("threads", &prep_threads);
    prepare->callback([&, cm]() {
      active = "prepare";
      cm->apply();
      if (prep_input.empty()) throw std::runtime_error("--input is required");
      run_prepare(prep_input, prep_out_dir, prep_cap, prep_keywords, prep_split, prep_seed,
                  prep_threads);
    });
  }

  // ---- build-vocab ----
  auto* bv = app.add_subcommand("build-vocab", "build the word vocabulary");
  std::string bv_input, bv_out = "vocab.json";
  std::size_t bv_max = 8000, bv_min_freq = 2;
  {
    auto cm = std::make_shared<ConfigMerge>(bv);
    bv->add_option("--input", bv_input, "prepared JSONL");
    bv->add_option("--max-size", bv_max, "max vocabulary size (including specials)");
    bv->add_option("--min-freq", bv_min_freq, "minimum token frequency");
    bv->add_option("--out", bv_out, "output vocab JSON");
    cm->bind("input", &bv_input);
    cm->bind("max-size", &bv_max);
    cm->bind("min-freq", &bv_min_freq);
    cm->bind("out", &bv_out);
    bv->callback([&, cm]() {
      active = "build-vocab";
      cm->apply();
      if (bv_input.empty()) throw std::runtime_error("--input is required");
      run_build_vocab(bv_input, bv_max, bv_min_freq, bv_out);
    });
  }

  // ---- train ----
  auto* train = app.add_subcommand("train", "teacher-forced recursive training");
  std::string tr_corpus, tr_vocab, tr_model_cfg, tr_train_cfg, tr_variant = "standard";
  std::string tr_out = "ckpts", tr_resume, tr_precision = "f64";
  std::uint64_t tr_seed = 0;
  std::size_t tr_max_steps = 0, tr_epochs = 0;
  {
    auto cm = std::make_shared<ConfigMerge>(train);
    train->add_option("--corpus", tr_corpus, "directory with train.jsonl/valid.jsonl");
    train->add_option("--vocab", tr_vocab, "vocab.json path");
    train->add_option("--model-config", tr_model_cfg, "model config JSON file");
    train->add_option("--train-config", tr_train_cfg, "train config JSON file");
    train->add_option("--variant", tr_variant,
                      "standard|augmented|no_memory|no_cheating|no_new_discourse");
    train->add_option("--out-dir", tr_out, "checkpoint directory");
    train->add_option("--seed", tr_seed, "training seed");
    train->add_option("--resume", tr_resume, "checkpoint to resume from");
    train->add_option("--precision", tr_precision, "checkpoint payload dtype: f64|f32");
    train->add_option("--max-steps", tr_max_steps, "stop after N optimizer steps (0 = all epochs)");
    train->add_option("--epochs", tr_epochs, "override epochs (0 = from config)");
    cm->bind("corpus", &tr_corpus);
    cm->bind("vocab", &tr_vocab);
    cm->bind("model-config", &tr_model_cfg);
    cm->bind("train-config", &tr_train_cfg);
    cm->bind("variant", &tr_variant);
    cm->bind("out-dir", &tr_out);
    cm->bind("seed", &tr_seed);
    cm->bind("resume", &tr_resume);
    cm->bind("precision", &tr_precision);
    cm->bind("max-steps", &tr_max_steps);
    cm->bind("epochs", &tr_epochs);
    train->callback([&, cm]() {
      active = "train";
      cm->apply();
      if (tr_corpus.empty()) throw std::runtime_error("--corpus is required");
      if (tr_vocab.empty() && tr_resume.empty())
        throw std::runtime_error("--vocab is required unless resuming");
      run_train(tr_corpus, tr_vocab, tr_model_cfg, tr_train_cfg, tr_variant, tr_out, tr_seed,
                tr_resume, tr_precision, tr_max_steps, tr_epochs);
    });
  }

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "recursive story generation");
  std::string g_ckpt, g_keywords, g_out = "story.json", g_id;
  std::size_t g_paragraphs = 5, g_top_k = 50, g_ngram = 3, g_max_tokens = 200;
  double g_top_p = 0.95, g_penalty = 3.5;
  std::uint64_t g_seed = 0;
  {
    auto cm = std::make_shared<ConfigMerge>(gen);
    gen->add_option("--checkpoint", g_ckpt, "model checkpoint");
    gen->add_option("--keywords", g_keywords, "semicolon-separated keyword phrases");
    gen->add_option("--paragraphs", g_paragraphs, "exact paragraph count T");
    gen->add_option("--seed", g_seed, "sampling seed");
    gen->add_option("--out", g_out, "output story JSON");
    gen->add_option("--id", g_id, "story id recorded in the output");
    gen->add_option("--top-k", g_top_k, "top-k filter");
    gen->add_option("--top-p", g_top_p, "nucleus filter");
    gen->add_option("--no-repeat-ngram", g_ngram, "banned repeated n-gram size (0 disables)");
    gen->add_option("--repetition-penalty", g_penalty, "repetition penalty factor");
    gen->add_option("--max-paragraph-tokens", g_max_tokens, "per-paragraph token cap");
    cm->bind("checkpoint", &g_ckpt);
    cm->bind("keywords", &g_keywords);
    cm->bind("paragraphs", &g_paragraphs);
    cm->bind("seed", &g_seed);
    cm->bind("out", &g_out);
    cm->bind("id", &g_id);
    cm->bind("top-k", &g_top_k);
    cm->bind("top-p", &g_top_p);
    cm->bind("no-repeat-ngram", &g_ngram);
    cm->bind("repetition-penalty", &g_penalty);
    cm->bind("max-paragraph-tokens", &g_max_tokens);
    gen->callback([&, cm]() {
      active = "generate";
      cm->apply();
      if (g_ckpt.empty()) throw std::runtime_error("--checkpoint is required");
      if (g_keywords.empty()) throw std::runtime_error("--keywords is required");
      run_generate(g_ckpt, g_keywords, g_paragraphs, g_seed, g_out, g_top_k, g_top_p, g_ngram,
                   g_penalty, g_max_tokens, g_id);
    });
  }

  // ---- train-scorers ----
  auto* ts = app.add_subcommand("train-scorers", "train coherence/completeness classifiers");
  std::string ts_train, ts_eval, ts_vocab, ts_out = "scorers";
  std::uint64_t ts_seed = 0;
  std::size_t ts_epochs = 3, ts_d = 128, ts_layers = 2;
  {
    auto cm = std::make_shared<ConfigMerge>(ts);
    ts->add_option("--train", ts_train, "prepared train JSONL");
    ts->add_option("--eval", ts_eval, "prepared eval JSONL");
    ts->add_option("--vocab", ts_vocab, "vocab.json path");
    ts->add_option("--out-dir", ts_out, "output directory");
    ts->add_option("--seed", ts_seed, "seed");
    ts->add_option("--epochs", ts_epochs, "training epochs");
    ts->add_option("--d-model", ts_d, "encoder width");
    ts->add_option("--layers", ts_layers, "encoder layers");
    cm->bind("train", &ts_train);
    cm->bind("eval", &ts_eval);
    cm->bind("vocab", &ts_vocab);
    cm->bind("out-dir", &ts_out);
    cm->bind("seed", &ts_seed);
    cm->bind("epochs", &ts_epochs);
    cm->bind("d-model", &ts_d);
    cm->bind("layers", &ts_layers);
    ts->callback([&, cm]() {
      active = "train-scorers";
      cm->apply();
      if (ts_train.empty() || ts_eval.empty() || ts_vocab.empty())
        throw std::runtime_error("--train, --eval and --vocab are required");
      run_train_scorers(ts_train, ts_eval, ts_vocab, ts_out, ts_seed, ts_epochs, ts_d, ts_layers);
    });
  }

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "score generated stories");
  std::string ev_stories, ev_labels, ev_scorers, ev_out = "report.json";
  {
    auto cm = std::make_shared<ConfigMerge>(ev);
    ev->add_option("--stories", ev_stories, "directory of story JSON files");
    ev->add_option("--labels", ev_labels, "prepared JSONL with golden stories");
    ev->add_option("--scorers", ev_scorers, "directory with coherence/completeness checkpoints");
    ev->add_option("--out", ev_out, "output report JSON");
    cm->bind("stories", &ev_stories);
    cm->bind("labels", &ev_labels);
    cm->bind("scorers", &ev_scorers);
    cm->bind("out", &ev_out);
    ev->callback([&, cm]() {
      active = "evaluate";
      cm->apply();
      if (ev_stories.empty()) throw std::runtime_error("--stories is required");
      run_evaluate(ev_stories, ev_labels, ev_scorers, ev_out);
    });
  }

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "compare the standard model with its ablations");
  std::string ab_ckpts, ab_prepared, ab_counts = "5,10,20,30,50", ab_scorers,
                                     ab_out = "ablation.json";
  std::size_t ab_stories = 4;
  std::uint64_t ab_seed = 0;
  {
    auto cm = std::make_shared<ConfigMerge>(ab);
    ab->add_option("--checkpoints", ab_ckpts,
                   "comma list of variant=path (standard, no_memory, no_cheating, no_new_discourse)");
    ab->add_option("--prepared", ab_prepared, "prepared JSONL supplying keywords and labels");
    ab->add_option("--paragraph-counts", ab_counts, "comma list of story lengths");
    ab->add_option("--stories-per-count", ab_stories, "stories per variant per length");
    ab->add_option("--seed", ab_seed, "generation seed base");
    ab->add_option("--scorers", ab_scorers, "scorer checkpoint directory");
    ab->add_option("--out", ab_out, "output report JSON");
    cm->bind("checkpoints", &ab_ckpts);
    cm->bind("prepared", &ab_prepared);
    cm->bind("paragraph-counts", &ab_counts);
    cm->bind("stories-per-count", &ab_stories);
    cm->bind("seed", &ab_seed);
    cm->bind("scorers", &ab_scorers);
    cm->bind("out", &ab_out);
    ab->callback([&, cm]() {
      active = "ablate";
      cm->apply();
      if (ab_ckpts.empty() || ab_prepared.empty())
        throw std::runtime_error("--checkpoints and --prepared are required");
      run_ablate(ab_ckpts, ab_prepared, ab_counts, ab_stories, ab_seed, ab_scorers, ab_out);
    });
  }

  // ---- grad-check ----
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  std::size_t gc_d = 16, gc_layers = 2, gc_heads = 2, gc_slots = 4, gc_vocab = 200,
              gc_max_elems = 0;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  {
    auto cm = std::make_shared<ConfigMerge>(gc);
    gc->add_option("--d-model", gc_d, "model width");
    gc->add_option("--layers", gc_layers, "layers");
    gc->add_option("--heads", gc_heads, "attention heads");
    gc->add_option("--memory-slots", gc_slots, "memory slots");
    gc->add_option("--vocab", gc_vocab, "vocabulary size");
    gc->add_option("--epsilon", gc_eps, "finite-difference step");
    gc->add_option("--tolerance", gc_tol, "max relative error");
    gc->add_option("--seed", gc_seed, "seed");
    gc->add_option("--max-elements", gc_max_elems,
                   "probe at most N elements per parameter (0 = all)");
    cm->bind("d-model", &gc_d);
    cm->bind("layers", &gc_layers);
    cm->bind("heads", &gc_heads);
    cm->bind("memory-slots", &gc_slots);
    cm->bind("vocab", &gc_vocab);
    cm->bind("epsilon", &gc_eps);
    cm->bind("tolerance", &gc_tol);
    cm->bind("seed", &gc_seed);
    cm->bind("max-elements", &gc_max_elems);
    gc->callback([&, cm]() {
      active = "grad-check";
      cm->apply();
      const int rc = run_grad_check(gc_d, gc_layers, gc_heads, gc_slots, gc_vocab, gc_eps, gc_tol,
                                    gc_seed, gc_max_elems);
      if (rc != 0) throw std::runtime_error("gradient check failed");
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << ordered_json{{"error", e.what()}, {"subcommand", active}}.dump() << "\n";
    return 1;
  }
  return 0;
}

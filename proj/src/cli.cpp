#include "unifilter/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <malloc.h>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "CLI11.hpp"
#include "unifilter/classifier.hpp"
#include "unifilter/cluster_sampling.hpp"
#include "unifilter/error.hpp"
#include "unifilter/filter_pipeline.hpp"
#include "unifilter/io_formats.hpp"
#include "unifilter/mock_generator.hpp"
#include "unifilter/packing.hpp"
#include "unifilter/rng.hpp"
#include "unifilter/synthgen.hpp"
#include "unifilter/train.hpp"

namespace unifilter::cli {

namespace fs = std::filesystem;

std::string manifest_path(const std::string& primary_output) { return primary_output + ".manifest.json"; }

namespace {

// <dir>/<stem><suffix><ext>, e.g. labeled.jsonl -> labeled.val.jsonl
std::string with_suffix(const std::string& path, const std::string& suffix) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// Records from a JSONL file whose lines are plain records or labeled samples.
std::vector<Record> load_records(const std::string& path) {
  if (!fs::exists(path)) throw IoError("missing file: " + path);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<Record> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Record r = j.is_object() && j.contains("record") ? parse_record<LabeledSample>(j).record : parse_record<Record>(j);
      if (!seen.insert(record_id(r)).second) throw DataError("duplicate id '" + record_id(r) + "'");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LabeledSample> load_labeled(const std::string& path) {
  return read_records<LabeledSample>(path, true).records;
}

// Config keys are long flag names; anything given on the command line wins.
void apply_config(CLI::App& sub, const std::string& config_path) {
  if (config_path.empty()) return;
  const json cfg = read_json_file(config_path);
  if (!cfg.is_object()) throw UsageError("config must be a JSON object: " + config_path);
  std::unordered_map<std::string, CLI::Option*> by_name;
  for (CLI::Option* opt : sub.get_options())
    if (!opt->get_lnames().empty()) by_name[opt->get_lnames()[0]] = opt;
  for (const auto& [key, value] : cfg.items()) {
    const auto it = by_name.find(key);
    if (it == by_name.end() || key == "config" || key == "help") throw UsageError("unknown config key '" + key + "'");
    CLI::Option* opt = it->second;
    if (opt->count() > 0) continue;
    std::vector<json> vals = value.is_array() ? value.get<std::vector<json>>() : std::vector<json>{value};
    for (const auto& v : vals) opt->add_result(v.is_string() ? v.get<std::string>() : v.dump());
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

// Numbers and booleans keep their JSON type in the manifest.
json typed(const std::string& s) {
  const json v = json::parse(s, nullptr, false);
  return v.is_number() || v.is_boolean() ? v : json(s);
}

json resolved_options(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames()[0];
    if (name == "help") continue;
    const auto& res = opt->results();
    if (res.empty()) {
      j[name] = typed(opt->get_default_str());
    } else if (res.size() == 1) {
      j[name] = typed(res[0]);
    } else {
      j[name] = json::array();
      for (const auto& r : res) j[name].push_back(typed(r));
    }
  }
  return j;
}

struct Manifest {
  std::string subcommand;
  json config;
  std::uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::object();
  json extra = json::object();
};

void write_manifest(const std::string& primary, const Manifest& m, double wall) {
  json j = {{"subcommand", m.subcommand},
            {"config", m.config},
            {"seed", m.seed},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"tool_version", kToolVersion},
            {"wall_time_s", wall}};
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  write_json_file(manifest_path(primary), j);
}

encoder::EncoderConfig encoder_from(int channels, int patch_size, int d_v, int t, std::uint64_t seed) {
  encoder::EncoderConfig e;
  e.channels = channels;
  e.patch_size = patch_size;
  e.d_v = d_v;
  e.t = t;
  e.seed = seed;
  e.validate();
  return e;
}

std::vector<synthgen::SourceImage> caption_sources_of(const std::vector<Record>& recs) {
  std::vector<synthgen::SourceImage> out;
  for (const auto& r : recs)
    if (const auto* c = std::get_if<CaptionSample>(&r)) out.push_back({c->id, c->image});
  return out;
}

std::vector<synthgen::SourceDoc> doc_sources_of(const std::vector<Record>& recs) {
  std::vector<synthgen::SourceDoc> out;
  for (const auto& r : recs)
    if (const auto* d = std::get_if<InterleavedDoc>(&r)) {
      synthgen::SourceDoc s{d->id, {}};
      for (const auto& item : d->items)
        if (const auto* im = std::get_if<ImageItem>(&item)) s.images.push_back(im->image);
      out.push_back(std::move(s));
    }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  if (!fs::exists(path)) throw IoError("missing file: " + path);
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

packing::Vocab load_vocab(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return packing::Vocab::from_json(j);
  } catch (const DataError&) {
    return classifier::load_checkpoint(path).vocab();
  }
}

// ---- subcommands ----

struct GenOpts {
  std::string out, val_out, generator_config, nonsyn, sources, banned, modality = "both";
  std::size_t levels_count = 0;
  bool mock = false;
  double val_fraction = 0.05;
  int num_words = 20, min_doc_words = 500;
  int mock_categories = synthgen::kCategories, mock_k = 4, max_images = 2;
};

void cmd_gen(const GenOpts& o, Manifest& m, std::ostream& out) {
  if (o.mock == !o.generator_config.empty()) throw UsageError("gen: exactly one of --mock / --generator-config");
  if (o.levels_count == 0) throw UsageError("gen: --levels-count must be >= 1");
  const bool caps = o.modality == "both" || o.modality == "caption";
  const bool docs = o.modality == "both" || o.modality == "interleaved";
  if (!caps && !docs) throw UsageError("gen: --modality must be caption, interleaved or both");

  synthgen::MockConfig mc;
  mc.categories = o.mock_categories;
  mc.k = o.mock_k;
  mc.validate();

  std::unique_ptr<synthgen::TextGenerator> gen;
  if (o.mock) {
    gen = std::make_unique<synthgen::MockGenerator>(mc);
  } else {
    const json g = read_json_file(o.generator_config);
    if (g.value("type", "") != "replay" || !g.contains("responses"))
      throw UsageError("generator config needs {\"type\": \"replay\", \"responses\": PATH}");
    gen = std::make_unique<synthgen::ReplayGenerator>(g["responses"].get<std::string>());
  }

  const std::size_t need = kNumLevels * o.levels_count;
  std::vector<synthgen::SourceImage> cap_src;
  std::vector<synthgen::SourceDoc> doc_src;
  if (!o.sources.empty()) {
    const auto recs = load_records(o.sources);
    cap_src = caption_sources_of(recs);
    doc_src = doc_sources_of(recs);
    m.inputs["sources"] = o.sources;
  } else {
    if (!o.mock) throw UsageError("gen: --sources is required without --mock");
    if (caps) cap_src = synthgen::synth_caption_sources(need, mc, derive_seed(m.seed, fnv1a("caption-sources")));
    if (docs)
      doc_src = synthgen::synth_doc_sources(need, mc, derive_seed(m.seed, fnv1a("doc-sources")), o.max_images);
  }

  std::vector<CaptionSample> nonsyn;
  if (!o.nonsyn.empty()) {
    for (auto& r : load_records(o.nonsyn)) {
      auto* c = std::get_if<CaptionSample>(&r);
      if (!c) throw DataError("--nonsyn-positives must contain caption records");
      nonsyn.push_back(std::move(*c));
    }
    m.inputs["nonsyn_positives"] = o.nonsyn;
  }
  synthgen::SafetyPredicate safety;
  if (!o.banned.empty()) {
    safety = synthgen::banned_words_predicate(read_lines(o.banned));
    m.inputs["banned_words"] = o.banned;
  }

  synthgen::DatasetRequest req;
  req.caption_per_level = caps ? o.levels_count : 0;
  req.interleaved_per_level = docs ? o.levels_count : 0;
  req.val_fraction = o.val_fraction;
  req.seed = m.seed;
  req.num_words = o.num_words;
  req.min_doc_words = o.min_doc_words;
  const auto ds = synthgen::build_dataset(cap_src, doc_src, req, nonsyn, *gen, safety);

  const std::string val_out = o.val_out.empty() ? with_suffix(o.out, ".val") : o.val_out;
  ensure_parent(o.out);
  ensure_parent(val_out);
  write_records(o.out, ds.train);
  write_records(val_out, ds.validation);
  m.outputs = {{"train", o.out}, {"validation", val_out}};
  m.extra["report"] = ds.report.to_json();
  out << "generated " << ds.report.total << " samples (" << ds.report.train << " train, " << ds.report.validation
      << " validation) with the " << gen->name() << " generator\n";
}

struct ClusterOpts {
  std::string from, out, selected_out;
  std::size_t k = 16, per_cluster = 4;
  int max_iters = 100, channels = 3, patch_size = 4, d_v = 32;
  std::uint64_t encoder_seed = encoder::EncoderConfig{}.seed;
  bool centroids = false;
};

void cmd_cluster(const ClusterOpts& o, Manifest& m, std::ostream& out) {
  if (!fs::exists(o.from)) throw IoError("missing file: " + o.from);
  const encoder::FrozenPatchEmbedder emb(encoder_from(o.channels, o.patch_size, o.d_v, 1, o.encoder_seed));
  cluster::EmbeddingMatrix mat;
  std::vector<std::string> raw;
  std::ifstream in(o.from);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.is_object() && j.contains("embedding")) {
        const auto v = j.at("embedding").get<std::vector<double>>();
        mat.add(j.at("id").get<std::string>(), v);
      } else {
        const Record r =
            j.is_object() && j.contains("record") ? parse_record<LabeledSample>(j).record : parse_record<Record>(j);
        const auto v = std::holds_alternative<CaptionSample>(r)
                           ? cluster::image_embedding(std::get<CaptionSample>(r).image, emb)
                           : cluster::doc_embedding(std::get<InterleavedDoc>(r), emb);
        mat.add(record_id(r), v);
      }
      raw.push_back(line);
    } catch (const std::exception& e) {
      throw DataError(o.from + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  cluster::ClusterConfig cc{o.k, o.per_cluster, o.max_iters, m.seed};
  const auto res = cluster::kmeans(mat, cc);
  const auto sel = cluster::sample_per_cluster(mat, res.assignment, cc);
  json j = cluster::clusters_json(mat, res, o.centroids);
  j["selected"] = sel.ids;
  j["shortfall"] = sel.shortfall;
  ensure_parent(o.out);
  write_json_file(o.out, j);
  m.inputs["embeddings_from"] = o.from;
  m.outputs["clusters"] = o.out;
  if (!o.selected_out.empty()) {
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < mat.size(); ++i) idx[mat.ids[i]] = i;
    ensure_parent(o.selected_out);
    std::ofstream so(o.selected_out, std::ios::binary);
    for (const auto& id : sel.ids) so << raw[idx.at(id)] << '\n';
    if (!so) throw IoError("cannot write: " + o.selected_out);
    m.outputs["selected"] = o.selected_out;
  }
  out << "clustered " << mat.size() << " items into " << o.k << " clusters (" << res.iterations
      << " iterations), selected " << sel.ids.size() << "\n";
}

struct TrainOpts {
  std::string train, val, out;
  int epochs = 10, d = 64, layers = 2, heads = 4, t = 4, max_seq_len = 256;
  int channels = 3, patch_size = 4, d_v = 32;
  std::uint64_t encoder_seed = encoder::EncoderConfig{}.seed;
  std::size_t batch_size = 16, min_freq = 1;
  double lr = 3e-5, warmup_frac = 0.03, weight_decay = 0.01;
};

void cmd_train(const TrainOpts& o, Manifest& m, std::ostream& out) {
  const auto tr = load_labeled(o.train);
  const auto va = load_labeled(o.val);
  if (tr.empty()) throw DataError("empty training set: " + o.train);
  std::vector<Record> recs;
  for (const auto& s : tr) recs.push_back(s.record);
  auto vocab = packing::Vocab::build_from_records(recs, o.min_freq);

  classifier::ModelConfig cfg;
  cfg.d = o.d;
  cfg.n_layers = o.layers;
  cfg.n_heads = o.heads;
  cfg.max_seq_len = o.max_seq_len;
  cfg.encoder = encoder_from(o.channels, o.patch_size, o.d_v, o.t, o.encoder_seed);
  classifier::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.adam.peak_lr = o.lr;
  tc.adam.warmup_frac = o.warmup_frac;
  tc.adam.weight_decay = o.weight_decay;
  tc.seed = m.seed;

  auto res = classifier::train(tr, va, cfg, std::move(vocab), tc, [&](const classifier::EpochRecord& e) {
    out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_acc "
        << e.val_accuracy << " val_macro_f1 " << e.val_macro_f1 << "\n";
    out.flush();
  });
  ensure_parent(o.out);
  classifier::save_checkpoint(o.out, res.model);
  m.inputs = {{"train", o.train}, {"val", o.val}};
  m.outputs["checkpoint"] = o.out;
  m.extra["history"] = classifier::history_json(res);
}

void cmd_eval(const std::string& ckpt, const std::string& val, const std::string& outp, Manifest& m,
              std::ostream& out) {
  const auto model = classifier::load_checkpoint(ckpt);
  const auto samples = load_labeled(val);
  const auto rep = classifier::evaluate_model(model, samples);
  ensure_parent(outp);
  write_json_file(outp, eval::to_json(rep));
  m.inputs = {{"checkpoint", ckpt}, {"val", val}};
  m.outputs["eval"] = outp;
  out << eval::format_table(rep);
}

void cmd_score(const std::string& ckpt, const std::string& in, const std::string& outp, std::size_t batch,
               std::size_t threads, Manifest& m, std::ostream& out) {
  const auto model = classifier::load_checkpoint(ckpt);
  const auto recs = load_records(in);
  const auto res = filter::score_corpus(recs, model, {batch, threads});
  ensure_parent(outp);
  write_records(outp, res.scores);
  const std::string rej = outp + ".rejects.jsonl";
  JsonlWriter w(rej);
  for (const auto& r : res.rejects) w.write_json({{"id", r.id}, {"reason", r.reason}});
  w.close();
  m.inputs = {{"checkpoint", ckpt}, {"in", in}};
  m.outputs = {{"scores", outp}, {"rejects", rej}};
  m.extra["counts"] = {{"scored", res.scores.size()}, {"rejected", res.rejects.size()}};
  out << "scored " << res.scores.size() << " records, rejected " << res.rejects.size() << "\n";
}

struct FilterOpts {
  std::string scores, in, out;
  double fraction = 0.30, caption_fraction = 0.30, interleaved_fraction = 0.15;
};

void cmd_filter(const FilterOpts& o, bool single_fraction, Manifest& m, std::ostream& out) {
  for (double f : {o.fraction, o.caption_fraction, o.interleaved_fraction}) filter::retained_count(1, f);
  const auto scores = read_records<ScoredRecord>(o.scores, true).records;
  auto recs = load_records(o.in);
  // records rejected at scoring time are dropped, not treated as a mismatch
  const std::string rej = o.scores + ".rejects.jsonl";
  if (fs::exists(rej)) {
    std::unordered_set<std::string> rejected;
    std::ifstream rin(rej);
    std::string line;
    while (std::getline(rin, line))
      if (!line.empty()) rejected.insert(json::parse(line).at("id").get<std::string>());
    std::erase_if(recs, [&](const Record& r) { return rejected.count(record_id(r)) > 0; });
    m.inputs["rejects"] = rej;
  }

  std::vector<Record> kept;
  if (single_fraction) {
    kept = filter::filter_records(recs, scores, o.fraction);
  } else {
    std::unordered_set<std::string> keep;
    for (Modality mod : {Modality::caption, Modality::interleaved}) {
      std::vector<Record> r;
      std::vector<ScoredRecord> s;
      for (const auto& x : recs)
        if (record_modality(x) == mod) r.push_back(x);
      for (const auto& x : scores)
        if (x.modality == mod) s.push_back(x);
      if (r.empty() && s.empty()) continue;
      const double f = mod == Modality::caption ? o.caption_fraction : o.interleaved_fraction;
      for (const auto& x : filter::filter_records(r, s, f)) keep.insert(record_id(x));
    }
    for (const auto& x : recs)
      if (keep.count(record_id(x))) kept.push_back(x);
  }
  ensure_parent(o.out);
  write_records(o.out, kept);
  m.inputs["scores"] = o.scores;
  m.inputs["in"] = o.in;
  m.outputs["filtered"] = o.out;
  m.extra["counts"] = {{"input", recs.size()}, {"kept", kept.size()}};
  out << "kept " << kept.size() << " of " << recs.size() << " records\n";
}

void cmd_dfn(const std::string& in, const std::string& outp, double tau, const encoder::EncoderConfig& ec,
             Manifest& m, std::ostream& out) {
  std::vector<InterleavedDoc> docs;
  for (auto& r : load_records(in)) {
    auto* d = std::get_if<InterleavedDoc>(&r);
    if (!d) throw DataError("dfn-filter expects interleaved documents, got caption '" + record_id(r) + "'");
    docs.push_back(std::move(*d));
  }
  const encoder::FrozenPatchEmbedder emb(ec);
  const std::size_t dim = std::size_t(ec.d_v);
  const auto res = filter::dfn_filter_corpus(
      docs, [dim](const std::string& s) { return filter::hashed_text_embedding(s, dim); },
      [&emb](const ImagePayload& p) { return cluster::image_embedding(p, emb); }, tau);
  ensure_parent(outp);
  write_records(outp, res.kept);
  const std::string rej = outp + ".rejects.jsonl";
  write_records(rej, res.dropped);
  m.inputs["in"] = in;
  m.outputs = {{"filtered", outp}, {"rejects", rej}};
  m.extra["counts"] = {{"docs", docs.size()},
                       {"kept", res.kept.size()},
                       {"dropped", res.dropped.size()},
                       {"images_before", res.images_before},
                       {"images_removed", res.images_removed}};
  out << "kept " << res.kept.size() << " of " << docs.size() << " documents, removed " << res.images_removed
      << " of " << res.images_before << " images\n";
}

void cmd_pack(const std::string& in, const std::string& outp, const std::string& vocab_path, std::size_t ctx,
              int t, bool caption_eoc, Manifest& m, std::ostream& out) {
  const auto recs = load_records(in);
  packing::Vocab vocab;
  if (vocab_path.empty()) {
    vocab = packing::Vocab::build_from_records(recs);
    const std::string vp = outp + ".vocab.json";
    ensure_parent(vp);
    write_json_file(vp, vocab.to_json());
    m.outputs["vocab"] = vp;
  } else {
    vocab = load_vocab(vocab_path);
    m.inputs["vocab"] = vocab_path;
  }
  const auto seqs = packing::pack(recs, ctx, vocab, {t, caption_eoc});
  ensure_parent(outp);
  JsonlWriter w(outp);
  for (const auto& s : seqs) w.write_json(packing::to_json(s));
  w.close();
  m.inputs["in"] = in;
  m.outputs["packed"] = outp;
  m.extra["counts"] = {{"records", recs.size()}, {"sequences", seqs.size()}};
  out << "packed " << recs.size() << " records into " << seqs.size() << " sequences of " << ctx << "\n";
}

void cmd_stats(const std::string& in, const std::string& outp, double equiv, const std::string& reference,
               std::optional<double> retained, Manifest& m, std::ostream& out) {
  const auto recs = load_records(in);
  double frac = retained.value_or(1.0);
  if (!reference.empty()) {
    if (retained) throw UsageError("stats: --reference and --retained-fraction are exclusive");
    const auto ref = load_records(reference);
    if (ref.empty()) throw DataError("stats: empty reference corpus");
    frac = double(recs.size()) / double(ref.size());
    m.inputs["reference"] = reference;
  }
  const auto s = filter::corpus_stats(recs, equiv, frac);
  ensure_parent(outp);
  write_json_file(outp, filter::to_json(s));
  m.inputs["in"] = in;
  m.outputs["stats"] = outp;
  out << filter::to_json(s).dump(2) << "\n";
}

void cmd_bench(const std::string& ckpt, const std::string& outp, const std::vector<std::size_t>& sizes,
               const std::vector<std::size_t>& batches, const std::string& pool_path, std::size_t pool_size,
               std::size_t threads, int repeats, Manifest& m, std::ostream& out) {
  const auto model = classifier::load_checkpoint(ckpt);
  std::vector<Record> pool;
  if (!pool_path.empty()) {
    pool = load_records(pool_path);
    m.inputs["pool"] = pool_path;
  } else {
    // mock captions and documents, alternating
    synthgen::MockConfig mc;
    mc.channels = model.config().encoder.channels;
    mc.patch_size = model.config().encoder.patch_size;
    mc.image_size = 6 * mc.patch_size;
    const auto caps = synthgen::synth_caption_sources(pool_size, mc, derive_seed(m.seed, fnv1a("bench-captions")));
    const auto docs = synthgen::synth_doc_sources(pool_size, mc, derive_seed(m.seed, fnv1a("bench-docs")));
    for (std::size_t i = 0; i < pool_size; ++i) {
      const auto cats = synthgen::image_categories(caps[i].image, mc);
      pool.push_back(CaptionSample{caps[i].id, caps[i].image, synthgen::mock_caption(cats, mc, i)});
      const auto body = synthgen::mock_document(synthgen::image_categories(docs[i].images[0], mc),
                                                docs[i].images.size(), mc, i);
      pool.push_back(synthgen::parse_interleaved_response(body, docs[i].images, docs[i].id));
    }
  }
  const auto rep = filter::throughput_bench(model, pool, sizes, batches, threads, repeats);
  ensure_parent(outp);
  json j = filter::to_json(rep);
  write_json_file(outp, j);
  m.inputs["checkpoint"] = ckpt;
  m.outputs["bench"] = outp;
  for (const auto& r : rep.rows)
    out << "size " << r.corpus_size << " batch " << r.batch_size << " " << r.seconds << " s " << r.samples_per_s
        << " samples/s\n";
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return 2;
    case ErrorKind::data:
    case ErrorKind::io: return 3;
    case ErrorKind::numeric: return 4;
  }
  return 1;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& msg) {
  err << json{{"error", kind}, {"message", msg}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  // Batched activations run to a few MB; keep them on the heap instead of
  // mapping and unmapping fresh pages for every temporary.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 128 << 20);
  CLI::App app{"Multimodal data-quality scoring and filtering", "unifilter"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", kToolVersion);

  std::uint64_t seed = 0;
  std::string config;
  auto common = [&](CLI::App* s) {
    s->add_option("--seed", seed, "Random seed");
    s->add_option("--config", config, "JSON file of option defaults")->check(CLI::ExistingFile);
  };

  GenOpts go;
  auto* gen = app.add_subcommand("gen", "Build a labeled dataset");
  common(gen);
  gen->add_option("--out", go.out, "Training split (JSONL)")->required();
  gen->add_option("--val-out", go.val_out, "Validation split; default <out>.val.jsonl");
  gen->add_option("--levels-count", go.levels_count, "Samples per level and modality")->required();
  gen->add_flag("--mock", go.mock, "Use the deterministic mock generator");
  gen->add_option("--generator-config", go.generator_config, "Replay generator config (JSON)");
  gen->add_option("--val-fraction", go.val_fraction, "Validation fraction");
  gen->add_option("--nonsyn-positives", go.nonsyn, "Extra positive captions (JSONL)");
  gen->add_option("--sources", go.sources, "Source images / documents (JSONL)");
  gen->add_option("--banned-words", go.banned, "Safety word list, whitespace separated");
  gen->add_option("--modality", go.modality, "caption | interleaved | both");
  gen->add_option("--num-words", go.num_words, "Minimum caption words in the prompt");
  gen->add_option("--min-doc-words", go.min_doc_words, "Minimum document words in the prompt");
  gen->add_option("--mock-categories", go.mock_categories, "Mock categories per slot");
  gen->add_option("--mock-k", go.mock_k, "Mock keywords per image");
  gen->add_option("--max-images", go.max_images, "Mock images per document");

  ClusterOpts co;
  auto* clu = app.add_subcommand("cluster", "k-means source selection");
  common(clu);
  clu->add_option("--embeddings-from", co.from, "Records or {id, embedding} lines (JSONL)")->required();
  clu->add_option("--k", co.k, "Clusters");
  clu->add_option("--per-cluster", co.per_cluster, "Samples drawn per cluster");
  clu->add_option("--max-iters", co.max_iters, "Lloyd iterations");
  clu->add_option("--out", co.out, "Clusters JSON")->required();
  clu->add_option("--selected-out", co.selected_out, "Selected input lines (JSONL)");
  clu->add_flag("--centroids", co.centroids, "Include centroids in the output");
  clu->add_option("--channels", co.channels);
  clu->add_option("--patch-size", co.patch_size);
  clu->add_option("--d-v", co.d_v);
  clu->add_option("--encoder-seed", co.encoder_seed);

  TrainOpts to;
  auto* trn = app.add_subcommand("train", "Train the quality classifier");
  common(trn);
  trn->add_option("--train", to.train, "Labeled training set")->required();
  trn->add_option("--val", to.val, "Labeled validation set")->required();
  trn->add_option("--out-checkpoint", to.out, "Checkpoint path")->required();
  trn->add_option("--epochs", to.epochs);
  trn->add_option("--batch-size", to.batch_size);
  trn->add_option("--lr", to.lr, "Peak learning rate");
  trn->add_option("--warmup-frac", to.warmup_frac);
  trn->add_option("--weight-decay", to.weight_decay);
  trn->add_option("--d", to.d, "Model width");
  trn->add_option("--layers", to.layers);
  trn->add_option("--heads", to.heads);
  trn->add_option("--t", to.t, "Pooled grid side");
  trn->add_option("--max-seq-len", to.max_seq_len);
  trn->add_option("--channels", to.channels);
  trn->add_option("--patch-size", to.patch_size);
  trn->add_option("--d-v", to.d_v);
  trn->add_option("--encoder-seed", to.encoder_seed);
  trn->add_option("--min-freq", to.min_freq, "Vocabulary frequency cutoff");

  std::string ev_ckpt, ev_val, ev_out;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  common(evl);
  evl->add_option("--checkpoint", ev_ckpt)->required();
  evl->add_option("--val", ev_val)->required();
  evl->add_option("--out", ev_out)->required();

  std::string sc_ckpt, sc_in, sc_out;
  std::size_t sc_batch = 8, threads = 0;
  auto* sco = app.add_subcommand("score", "Score a corpus");
  common(sco);
  sco->add_option("--checkpoint", sc_ckpt)->required();
  sco->add_option("--in", sc_in)->required();
  sco->add_option("--out", sc_out)->required();
  sco->add_option("--batch-size", sc_batch);
  sco->add_option("--threads", threads, "Workers; 0 = UNIFILTER_THREADS or all cores");

  FilterOpts fo;
  auto* fil = app.add_subcommand("filter", "Keep the top-scoring fraction");
  common(fil);
  fil->add_option("--scores", fo.scores)->required();
  fil->add_option("--in", fo.in)->required();
  fil->add_option("--out", fo.out)->required();
  auto* frac_opt = fil->add_option("--fraction", fo.fraction, "One fraction for every record");
  fil->add_option("--caption-fraction", fo.caption_fraction, "Per-modality fraction when --fraction is absent");
  fil->add_option("--interleaved-fraction", fo.interleaved_fraction);

  std::string dfn_in, dfn_out;
  double tau = 0.15;
  int dfn_channels = 3, dfn_patch = 4, dfn_dv = 32;
  std::uint64_t dfn_eseed = encoder::EncoderConfig{}.seed;
  auto* dfn = app.add_subcommand("dfn-filter", "Image/paragraph similarity baseline");
  common(dfn);
  dfn->add_option("--in", dfn_in)->required();
  dfn->add_option("--out", dfn_out)->required();
  dfn->add_option("--threshold", tau);
  dfn->add_option("--channels", dfn_channels);
  dfn->add_option("--patch-size", dfn_patch);
  dfn->add_option("--d-v", dfn_dv);
  dfn->add_option("--encoder-seed", dfn_eseed);

  std::string pk_in, pk_out, pk_vocab;
  std::size_t ctx = 4096;
  int pk_t = 12;
  bool pk_eoc = false;
  auto* pck = app.add_subcommand("pack", "Pack records into fixed-length sequences");
  common(pck);
  pck->add_option("--in", pk_in)->required();
  pck->add_option("--out", pk_out)->required();
  pck->add_option("--vocab", pk_vocab, "Vocabulary JSON or checkpoint; default: built from --in");
  pck->add_option("--context-len", ctx);
  pck->add_option("--t", pk_t, "Pooled grid side; t*t placeholders per image");
  pck->add_flag("--caption-end-of-chunk", pk_eoc, "Emit end-of-chunk before caption images");

  std::string st_in, st_out, st_ref;
  double equiv = 144.0, st_retained = 1.0;
  auto* sta = app.add_subcommand("stats", "Corpus statistics");
  common(sta);
  sta->add_option("--in", st_in)->required();
  sta->add_option("--out", st_out)->required();
  sta->add_option("--image-token-equiv", equiv, "Tokens counted per image");
  sta->add_option("--reference", st_ref, "Unfiltered corpus for the retained fraction");
  auto* ret_opt = sta->add_option("--retained-fraction", st_retained);

  std::string bn_ckpt, bn_out, bn_pool;
  std::vector<std::size_t> sizes{64, 128}, batches{1, 8};
  std::size_t pool_size = 32, bn_threads = 1;
  int repeats = 3;
  auto* ben = app.add_subcommand("bench", "Scoring throughput");
  common(ben);
  ben->add_option("--checkpoint", bn_ckpt)->required();
  ben->add_option("--out", bn_out)->required();
  ben->add_option("--sizes", sizes)->delimiter(',');
  ben->add_option("--batches", batches)->delimiter(',');
  ben->add_option("--pool", bn_pool, "Records to cycle; default: mock records");
  ben->add_option("--pool-size", pool_size, "Mock records per modality");
  ben->add_option("--threads", bn_threads);
  ben->add_option("--repeats", repeats);

  // Required options are checked after the config file is applied, so a
  // config may supply them.
  std::vector<CLI::Option*> needed;
  for (CLI::App* s : app.get_subcommands({}))
    for (CLI::Option* opt : s->get_options())
      if (opt->get_required()) {
        needed.push_back(opt);
        opt->required(false);
      }

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = e.get_name();
    report_error(err, "usage", msg);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    apply_config(*sub, config);
    for (CLI::Option* opt : sub->get_options())
      if (std::find(needed.begin(), needed.end(), opt) != needed.end() && opt->count() == 0)
        throw UsageError(opt->get_name() + " is required");
    Manifest m;
    m.subcommand = sub->get_name();
    m.seed = seed;
    m.config = resolved_options(*sub);
    if (!config.empty()) m.inputs["config"] = config;
    std::string primary;
    const std::string name = sub->get_name();
    if (name == "gen") {
      cmd_gen(go, m, out);
      primary = go.out;
    } else if (name == "cluster") {
      cmd_cluster(co, m, out);
      primary = co.out;
    } else if (name == "train") {
      cmd_train(to, m, out);
      primary = to.out;
    } else if (name == "eval") {
      cmd_eval(ev_ckpt, ev_val, ev_out, m, out);
      primary = ev_out;
    } else if (name == "score") {
      cmd_score(sc_ckpt, sc_in, sc_out, sc_batch, threads, m, out);
      primary = sc_out;
    } else if (name == "filter") {
      cmd_filter(fo, frac_opt->count() > 0, m, out);
      primary = fo.out;
    } else if (name == "dfn-filter") {
      cmd_dfn(dfn_in, dfn_out, tau, encoder_from(dfn_channels, dfn_patch, dfn_dv, 1, dfn_eseed), m, out);
      primary = dfn_out;
    } else if (name == "pack") {
      cmd_pack(pk_in, pk_out, pk_vocab, ctx, pk_t, pk_eoc, m, out);
      primary = pk_out;
    } else if (name == "stats") {
      cmd_stats(st_in, st_out, equiv, st_ref, ret_opt->count() ? std::optional(st_retained) : std::nullopt, m, out);
      primary = st_out;
    } else if (name == "bench") {
      cmd_bench(bn_ckpt, bn_out, sizes, batches, bn_pool, pool_size, bn_threads, repeats, m, out);
      primary = bn_out;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(primary, m, wall);
    return 0;
  } catch (const Error& e) {
    report_error(err, error_kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    report_error(err, "data", e.what());
    return 3;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "io", e.what());
    return 3;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace unifilter::cli

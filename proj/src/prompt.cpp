#include "textseg/prompt.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/rng.hpp"

namespace textseg {

namespace {

bool is_token_byte(unsigned char ch) { return std::isalnum(ch) || ch >= 0x80; }

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

/// A prompt after alias recognition: plain words and organ mentions.
struct Item {
  std::string word;
  std::vector<int> ids;  // empty for plain words
  bool organ() const { return !ids.empty(); }
};

std::vector<Item> recognize(std::string_view text, const Lexicon& lex) {
  const auto toks = tokenize(text);
  std::vector<Item> items;
  std::size_t i = 0;
  while (i < toks.size()) {
    const Lexicon::Alias* hit = nullptr;
    for (const auto& alias : lex.aliases()) {
      const std::size_t k = alias.tokens.size();
      if (i + k > toks.size()) continue;
      if (std::equal(alias.tokens.begin(), alias.tokens.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) {
        hit = &alias;
        break;
      }
    }
    if (hit) {
      items.push_back({join_tokens(hit->tokens), hit->ids});
      i += hit->tokens.size();
    } else {
      items.push_back({toks[i], {}});
      ++i;
    }
  }
  return items;
}

std::vector<Relation> match_relations(const std::vector<Item>& items, const Lexicon& lex) {
  std::vector<Relation> out;
  for (const auto& tmpl : lex.relation_templates()) {
    const std::size_t n = tmpl.tokens.size();
    for (std::size_t s = 0; s + n <= items.size(); ++s) {
      const std::vector<int>* anchor = nullptr;
      const std::vector<int>* target = nullptr;
      bool ok = true;
      for (std::size_t k = 0; k < n && ok; ++k) {
        const auto& tt = tmpl.tokens[k];
        const auto& item = items[s + k];
        switch (tt.kind) {
          case TemplateToken::Kind::Literal:
            ok = !item.organ() &&
                 std::find(tt.alternatives.begin(), tt.alternatives.end(), item.word) != tt.alternatives.end();
            break;
          case TemplateToken::Kind::Anchor:
            ok = item.organ();
            anchor = &item.ids;
            break;
          case TemplateToken::Kind::Target:
            ok = item.organ();
            target = &item.ids;
            break;
        }
      }
      if (!ok || !anchor || !target) continue;
      for (int a : *anchor) {
        for (int t : *target) {
          if (a != t) out.push_back({a, t});
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (is_token_byte(u)) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      toks.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) toks.push_back(std::move(cur));
  return toks;
}

RelationTemplate RelationTemplate::compile(const std::string& pattern) {
  RelationTemplate t;
  t.pattern = pattern;
  for (const auto& raw : split(pattern, ' ')) {
    const std::string word = trim(raw);
    if (word.empty()) continue;
    TemplateToken tok;
    if (word == "{ANCHOR}") {
      tok.kind = TemplateToken::Kind::Anchor;
    } else if (word == "{TARGET}") {
      tok.kind = TemplateToken::Kind::Target;
    } else {
      std::string body = word;
      if (body.size() >= 2 && body.front() == '<' && body.back() == '>') body = body.substr(1, body.size() - 2);
      for (const auto& alt : split(body, '|')) tok.alternatives.push_back(lowercase(trim(alt)));
    }
    t.tokens.push_back(std::move(tok));
  }
  int anchors = 0;
  int targets = 0;
  for (const auto& tok : t.tokens) {
    anchors += tok.kind == TemplateToken::Kind::Anchor;
    targets += tok.kind == TemplateToken::Kind::Target;
  }
  if (anchors != 1 || targets != 1) {
    throw Error(ErrorCode::ConfigInvalid, "relation template needs exactly one {ANCHOR} and one {TARGET}: " + pattern);
  }
  return t;
}

Lexicon Lexicon::defaults() {
  Lexicon lex;
  lex.add_organ({1, "spleen", {"spleenic organ", "splenic organ"}});
  lex.add_organ({2, "right kidney", {"right renal structure"}});
  lex.add_organ({3, "left kidney", {"left renal structure"}});
  lex.add_organ({4, "gallbladder", {"gall bladder"}});
  lex.add_organ({5, "esophagus", {"oesophagus"}});
  lex.add_organ({6, "liver", {"hepatic organ"}});
  lex.add_organ({7, "stomach", {"gastric organ"}});
  lex.add_organ({8, "aorta", {"abdominal aorta"}});
  lex.add_organ({9, "inferior vena cava", {"ivc", "vena cava"}});
  lex.add_organ({10, "portal and splenic veins", {"portal vein", "splenic vein", "portal and splenic vein"}});
  lex.add_organ({11, "pancreas", {"pancreatic organ"}});
  lex.add_organ({12, "right adrenal gland", {"right adrenal"}});
  lex.add_organ({13, "left adrenal gland", {"left adrenal"}});
  lex.add_family({{2, 3}, "kidney", {"kidneys", "renal structure", "renal structures"}});
  lex.add_relation_template("<region|area> around the {ANCHOR} that belongs to the {TARGET}");
  lex.add_relation_template("{TARGET} near the {ANCHOR}");
  return lex;
}

void Lexicon::add_organ(OrganClass organ) {
  if (organ.id < 1 || organ.id > 255) throw Error(ErrorCode::ConfigInvalid, "organ id out of range");
  for (const auto& o : organs_) {
    if (o.id == organ.id) throw Error(ErrorCode::ConfigInvalid, "duplicate organ id " + std::to_string(organ.id));
  }
  organ.canonical_name = join_tokens(tokenize(organ.canonical_name));
  for (auto& s : organ.synonyms) s = join_tokens(tokenize(s));
  organs_.push_back(std::move(organ));
  std::sort(organs_.begin(), organs_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  rebuild_aliases();
}

void Lexicon::add_family(OrganFamily family) {
  if (family.ids.size() < 2) throw Error(ErrorCode::ConfigInvalid, "a family needs at least two ids");
  family.name = join_tokens(tokenize(family.name));
  for (auto& s : family.synonyms) s = join_tokens(tokenize(s));
  families_.push_back(std::move(family));
  rebuild_aliases();
}

void Lexicon::add_relation_template(const std::string& pattern) { templates_.push_back(RelationTemplate::compile(pattern)); }

void Lexicon::rebuild_aliases() {
  aliases_.clear();
  std::set<std::string> seen;
  auto add = [&](const std::string& text, const std::vector<int>& ids) {
    if (text.empty()) throw Error(ErrorCode::ConfigInvalid, "empty organ alias");
    if (!seen.insert(text).second) throw Error(ErrorCode::ConfigInvalid, "alias '" + text + "' maps to two entries");
    aliases_.push_back({split(text, ' '), ids});
  };
  for (const auto& o : organs_) {
    add(o.canonical_name, {o.id});
    for (const auto& s : o.synonyms) add(s, {o.id});
  }
  for (const auto& f : families_) {
    add(f.name, f.ids);
    for (const auto& s : f.synonyms) add(s, f.ids);
  }
  std::stable_sort(aliases_.begin(), aliases_.end(),
                   [](const Alias& a, const Alias& b) { return a.tokens.size() > b.tokens.size(); });
}

const OrganClass& Lexicon::organ(int id) const {
  for (const auto& o : organs_) {
    if (o.id == id) return o;
  }
  throw Error(ErrorCode::KeyNotFound, "no organ with id " + std::to_string(id));
}

std::string Lexicon::name(int id) const {
  if (id == 0) return "background";
  return organ(id).canonical_name;
}

int Lexicon::max_id() const { return organs_.empty() ? 0 : organs_.back().id; }

Lexicon Lexicon::parse(std::string_view text) {
  Lexicon lex;
  for (const auto& raw : split(text, '\n')) {
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto bar = line.find('|');
    if (bar == std::string::npos) throw Error(ErrorCode::ConfigInvalid, "lexicon line without '|': " + line);
    const std::string head = trim(line.substr(0, bar));
    if (head == "relation") {
      lex.add_relation_template(trim(line.substr(bar + 1)));
      continue;
    }
    const auto fields = split(line, '|');
    if (fields.size() != 3) throw Error(ErrorCode::ConfigInvalid, "lexicon line needs id|canonical|synonyms: " + line);
    std::vector<int> ids;
    for (const auto& id : split(fields[0], ',')) ids.push_back(static_cast<int>(parse_int(id)));
    std::vector<std::string> syns;
    for (const auto& s : split(fields[2], ',')) {
      if (!trim(s).empty()) syns.push_back(lowercase(trim(s)));
    }
    if (ids.size() == 1) {
      lex.add_organ({ids[0], lowercase(trim(fields[1])), syns});
    } else {
      lex.add_family({ids, lowercase(trim(fields[1])), syns});
    }
  }
  return lex;
}

Lexicon Lexicon::load(const std::string& path) { return parse(read_file(path)); }

std::string Lexicon::serialize() const {
  std::string out;
  auto line = [&](const std::string& ids, const std::string& name, const std::vector<std::string>& syns) {
    out += ids + "|" + name + "|";
    for (std::size_t i = 0; i < syns.size(); ++i) out += (i ? "," : "") + syns[i];
    out += '\n';
  };
  for (const auto& o : organs_) line(std::to_string(o.id), o.canonical_name, o.synonyms);
  for (const auto& f : families_) {
    std::string ids;
    for (std::size_t i = 0; i < f.ids.size(); ++i) ids += (i ? "," : "") + std::to_string(f.ids[i]);
    line(ids, f.name, f.synonyms);
  }
  for (const auto& t : templates_) out += "relation|" + t.pattern + "\n";
  return out;
}

void Lexicon::save(const std::string& path) const { write_file(path, serialize()); }

bool ParsedPrompt::any_organ() const {
  return std::any_of(presence.begin(), presence.end(), [](auto b) { return b != 0; });
}

std::vector<int> ParsedPrompt::organs() const {
  std::vector<int> out;
  for (std::size_t c = 1; c < presence.size(); ++c) {
    if (presence[c]) out.push_back(static_cast<int>(c));
  }
  return out;
}

ParsedPrompt parse_prompt(std::string_view text, const Lexicon& lex, int num_classes) {
  ParsedPrompt p;
  p.raw_text = std::string(text);
  p.presence.assign(static_cast<std::size_t>(num_classes), 0);
  const auto items = recognize(text, lex);
  for (const auto& item : items) {
    for (int id : item.ids) {
      if (id < num_classes) p.presence[static_cast<std::size_t>(id)] = 1;
    }
  }
  for (const auto& r : match_relations(items, lex)) {
    if (r.anchor >= num_classes || r.target >= num_classes) continue;
    p.relations.push_back(r);
    p.presence[static_cast<std::size_t>(r.target)] = 1;
  }
  p.presence[0] = 0;
  return p;
}

std::vector<Relation> extract_relations(std::string_view text, const Lexicon& lex) {
  return match_relations(recognize(text, lex), lex);
}

void PromptCorpusConfig::validate() const {
  if (n_train + n_val == 0) throw Error(ErrorCode::ConfigInvalid, "corpus must contain at least one prompt");
  if (min_organs < 1 || max_organs < min_organs) throw Error(ErrorCode::ConfigInvalid, "bad organs_per_prompt range");
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(relation_probability) || !prob(synonym_probability)) {
    throw Error(ErrorCode::ConfigInvalid, "probabilities must lie in [0, 1]");
  }
}

namespace {

const char* kInstructions[] = {
    "segment the ", "create a segmentation mask of ", "delineate the ", "highlight the ", "outline the ",
};

std::string join_names(const std::vector<std::string>& names) {
  if (names.size() == 1) return names[0];
  if (names.size() == 2) return names[0] + " and " + names[1];
  std::string out;
  for (std::size_t i = 0; i + 1 < names.size(); ++i) out += names[i] + ", ";
  return out + "and " + names.back();
}

}  // namespace

std::vector<CorpusRecord> generate_prompt_corpus(const std::vector<LabelMap>& labels, const PromptCorpusConfig& cfg,
                                                 const Lexicon& lex, int num_classes) {
  cfg.validate();
  if (labels.empty()) throw Error(ErrorCode::EmptyForeground, "no label maps given");

  std::vector<std::vector<int>> present(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::vector<std::uint8_t> seen(256, 0);
    for (auto v : labels[i].data) seen[v] = 1;
    for (const auto& o : lex.organs()) {
      if (o.id < num_classes && seen[static_cast<std::size_t>(o.id)]) present[i].push_back(o.id);
    }
    if (present[i].empty()) {
      throw Error(ErrorCode::EmptyForeground, "label map " + std::to_string(i) + " has no foreground organ");
    }
  }

  Rng rng(cfg.seed);
  auto name_of = [&](int id) {
    const auto& o = lex.organ(id);
    if (!o.synonyms.empty() && rng.bernoulli(cfg.synonym_probability)) {
      return o.synonyms[rng.below(o.synonyms.size())];
    }
    return o.canonical_name;
  };

  const std::size_t total = cfg.n_train + cfg.n_val;
  std::vector<CorpusRecord> out;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t src = i % labels.size();
    std::vector<int> pool = present[src];
    const int hi = std::min<int>(cfg.max_organs, static_cast<int>(pool.size()));
    const int lo = std::min(cfg.min_organs, hi);
    const int k = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    for (int j = 0; j < k; ++j) {
      const auto pick = j + static_cast<std::size_t>(rng.below(pool.size() - static_cast<std::size_t>(j)));
      std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
    }
    std::set<int> expected(pool.begin(), pool.begin() + k);
    std::vector<std::string> names;
    for (int j = 0; j < k; ++j) names.push_back(name_of(pool[static_cast<std::size_t>(j)]));

    std::string text = kInstructions[rng.below(std::size(kInstructions))] + join_names(names);
    const auto& organs = present[src];
    if (organs.size() >= 2 && rng.bernoulli(cfg.relation_probability)) {
      const int anchor = organs[rng.below(organs.size())];
      int target = anchor;
      while (target == anchor) target = organs[rng.below(organs.size())];
      const std::string an = name_of(anchor);
      const std::string tn = name_of(target);
      if (rng.below(2) == 0) {
        text += " and the region around the " + an + " that belongs to the " + tn;
      } else {
        text += " and the " + tn + " near the " + an;
      }
      expected.insert(anchor);
      expected.insert(target);
    }

    CorpusRecord rec;
    rec.text = text;
    rec.parsed = parse_prompt(text, lex, num_classes);
    rec.source = src;
    const auto got = rec.parsed.organs();
    if (std::set<int>(got.begin(), got.end()) != expected) {
      throw std::logic_error("generated prompt does not parse back to its organs: " + text);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::string format_corpus_line(const CorpusRecord& rec) {
  std::string bits;
  for (auto b : rec.parsed.presence) bits += b ? '1' : '0';
  std::string rels;
  for (std::size_t i = 0; i < rec.parsed.relations.size(); ++i) {
    const auto& r = rec.parsed.relations[i];
    rels += (i ? "," : "") + std::to_string(r.anchor) + "-" + std::to_string(r.target);
  }
  return rec.text + "\t" + bits + "\t" + rels;
}

CorpusRecord parse_corpus_line(std::string_view line, int num_classes) {
  const auto fields = split(line, '\t');
  if (fields.size() != 3) throw Error(ErrorCode::BadTableFormat, "corpus line needs 3 tab-separated fields");
  CorpusRecord rec;
  rec.text = fields[0];
  rec.parsed.raw_text = fields[0];
  if (fields[1].size() != static_cast<std::size_t>(num_classes)) {
    throw Error(ErrorCode::LengthMismatch, "presence bits length != class count");
  }
  for (char ch : fields[1]) {
    if (ch != '0' && ch != '1') throw Error(ErrorCode::BadTableFormat, "presence bits must be 0/1");
    rec.parsed.presence.push_back(ch == '1');
  }
  const std::string rels = trim(fields[2]);
  if (!rels.empty()) {
    for (const auto& pair : split(rels, ',')) {
      const auto at = split(pair, '-');
      if (at.size() != 2) throw Error(ErrorCode::BadTableFormat, "relation must be anchor-target");
      rec.parsed.relations.push_back({static_cast<int>(parse_int(at[0])), static_cast<int>(parse_int(at[1]))});
    }
  }
  return rec;
}

void save_corpus(const std::vector<CorpusRecord>& records, const std::string& path) {
  std::string out;
  for (const auto& r : records) out += format_corpus_line(r) + "\n";
  write_file(path, out);
}

std::vector<CorpusRecord> load_corpus(const std::string& path, int num_classes) {
  std::vector<CorpusRecord> out;
  for (const auto& line : split(read_file(path), '\n')) {
    if (trim(line).empty()) continue;
    out.push_back(parse_corpus_line(line, num_classes));
  }
  return out;
}

}  // namespace textseg

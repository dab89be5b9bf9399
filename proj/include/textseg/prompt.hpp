#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "textseg/grid.hpp"

namespace textseg {

struct OrganClass {
  int id = 0;
  std::string canonical_name;
  std::vector<std::string> synonyms;
};

/// An alias that names several classes at once ("kidney" -> both kidneys).
struct OrganFamily {
  std::vector<int> ids;
  std::string name;
  std::vector<std::string> synonyms;
};

/// One token of a relation template: a literal with alternatives
/// ("region/area"), or an ANCHOR / TARGET organ slot.
struct TemplateToken {
  enum class Kind { Literal, Anchor, Target } kind = Kind::Literal;
  std::vector<std::string> alternatives;
};

struct RelationTemplate {
  std::string pattern;
  std::vector<TemplateToken> tokens;

  static RelationTemplate compile(const std::string& pattern);
};

class Lexicon {
 public:
  /// The 13 abdominal organs with their curated synonyms, the kidney family
  /// and the two relation templates.
  static Lexicon defaults();

  /// Line format: `id|canonical|syn1,syn2,...`; a family line lists several
  /// ids (`2,3|kidney|kidneys,renal structure`); `relation|<pattern>` adds a
  /// relation template.
  static Lexicon parse(std::string_view text);
  static Lexicon load(const std::string& path);
  std::string serialize() const;
  void save(const std::string& path) const;

  void add_organ(OrganClass organ);
  void add_family(OrganFamily family);
  void add_relation_template(const std::string& pattern);

  const std::vector<OrganClass>& organs() const { return organs_; }
  const std::vector<OrganFamily>& families() const { return families_; }
  const std::vector<RelationTemplate>& relation_templates() const { return templates_; }

  const OrganClass& organ(int id) const;
  std::string name(int id) const;
  int max_id() const;

  struct Alias {
    std::vector<std::string> tokens;
    std::vector<int> ids;
  };
  /// Every alias, longest (in tokens) first.
  const std::vector<Alias>& aliases() const { return aliases_; }

 private:
  void rebuild_aliases();

  std::vector<OrganClass> organs_;
  std::vector<OrganFamily> families_;
  std::vector<RelationTemplate> templates_;
  std::vector<Alias> aliases_;
};

struct Relation {
  int anchor = 0;
  int target = 0;
  bool operator==(const Relation&) const = default;
};

struct ParsedPrompt {
  std::vector<std::uint8_t> presence;
  std::vector<Relation> relations;
  std::string raw_text;

  bool any_organ() const;
  std::vector<int> organs() const;
  bool operator==(const ParsedPrompt&) const = default;
};

/// Lowercased ASCII-alphanumeric tokens; bytes >= 0x80 stay inside tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Presence of every organ named in the text (case-insensitive, longest alias
/// first, whole words) plus the targets of any relation phrases.
ParsedPrompt parse_prompt(std::string_view text, const Lexicon& lex, int num_classes = kDefaultClasses);

/// One (anchor, target) pair per template match; family anchors/targets expand
/// to every member class.
std::vector<Relation> extract_relations(std::string_view text, const Lexicon& lex);

struct PromptCorpusConfig {
  std::size_t n_train = 650;
  std::size_t n_val = 130;
  int min_organs = 1;
  int max_organs = 3;
  double relation_probability = 0.2;
  double synonym_probability = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorpusRecord {
  std::string text;
  ParsedPrompt parsed;
  std::size_t source = 0;  // index of the label map the prompt was drawn for
};

/// n_train + n_val prompts (training records first). Record i is drawn from
/// labels[i % labels.size()] and only names organs present in it.
std::vector<CorpusRecord> generate_prompt_corpus(const std::vector<LabelMap>& labels, const PromptCorpusConfig& cfg,
                                                 const Lexicon& lex, int num_classes = kDefaultClasses);

/// Tab-separated `prompt<TAB>presence_bits<TAB>anchor-target,...` lines.
std::string format_corpus_line(const CorpusRecord& rec);
CorpusRecord parse_corpus_line(std::string_view line, int num_classes = kDefaultClasses);
void save_corpus(const std::vector<CorpusRecord>& records, const std::string& path);
std::vector<CorpusRecord> load_corpus(const std::string& path, int num_classes = kDefaultClasses);

}  // namespace textseg

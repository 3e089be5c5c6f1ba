#include "featret/promptkit.hpp"

#include "featret/error.hpp"
#include "featret/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace featret {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++n;
    return n;
}

void require_once(std::string_view pattern, std::string_view placeholder, std::string_view section) {
    const auto n = count_occurrences(pattern, placeholder);
    if (n != 1) {
        throw ValidationError("template section [" + std::string(section) + "] must contain " +
                              std::string(placeholder) + " exactly once, found " + std::to_string(n));
    }
}

void require_absent(std::string_view pattern, std::string_view placeholder, std::string_view section) {
    if (count_occurrences(pattern, placeholder) != 0) {
        throw ValidationError("template section [" + std::string(section) + "] must not contain " +
                              std::string(placeholder));
    }
}

std::string replace_once(std::string text, std::string_view placeholder, std::string_view value) {
    const auto pos = text.find(placeholder);
    if (pos != std::string::npos) text.replace(pos, placeholder.size(), value);
    return text;
}

} // namespace

void PromptTemplate::validate() const {
    if (instruction.empty()) throw ValidationError("template section [instruction] is empty");
    for (const char* ph : {kExampleInput, kExampleOutput, kInput}) require_absent(instruction, ph, "instruction");
    require_once(example, kExampleInput, "example");
    require_once(example, kExampleOutput, "example");
    require_absent(example, kInput, "example");
    require_once(query, kInput, "query");
    require_absent(query, kExampleInput, "query");
    require_absent(query, kExampleOutput, "query");
}

PromptTemplate parse_template(std::string_view text, std::string name) {
    std::map<std::string, std::string> sections;
    std::string* current = nullptr;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string header = trim(line);
        if (header == "[instruction]" || header == "[example]" || header == "[query]") {
            const std::string key = header.substr(1, header.size() - 2);
            if (sections.count(key)) throw ValidationError("template line " + std::to_string(line_no) + ": duplicate section " + header);
            current = &sections[key];
            continue;
        }
        if (!current) {
            if (header.empty()) continue;
            throw ValidationError("template line " + std::to_string(line_no) + ": text before the first section header");
        }
        *current += line;
        *current += '\n';
    }
    PromptTemplate tpl;
    tpl.name = std::move(name);
    for (auto [key, field] : {std::pair{"instruction", &tpl.instruction}, std::pair{"example", &tpl.example},
                              std::pair{"query", &tpl.query}}) {
        auto it = sections.find(key);
        if (it == sections.end()) throw ValidationError(std::string("template is missing section [") + key + "]");
        std::string body = it->second;
        while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) body.pop_back();
        while (!body.empty() && body.front() == '\n') body.erase(body.begin());
        *field = std::move(body);
    }
    tpl.validate();
    return tpl;
}

PromptTemplate load_template(const std::filesystem::path& path) {
    return parse_template(read_text_file(path), path.stem().string());
}

std::string serialize_pairs(std::span<const SentimentPair> pairs) {
    std::vector<const SentimentPair*> ordered;
    for (const auto& p : pairs) ordered.push_back(&p);
    std::stable_sort(ordered.begin(), ordered.end(), [](const SentimentPair* a, const SentimentPair* b) {
        return a->span.first < b->span.first;
    });
    std::vector<ParsedPair> flat;
    for (const auto* p : ordered) flat.push_back({p->aspect, p->polarity});
    return serialize_pairs(std::span<const ParsedPair>(flat));
}

std::string serialize_pairs(std::span<const ParsedPair> pairs) {
    if (pairs.empty()) return "NONE";
    std::string out;
    for (const auto& p : pairs) {
        if (!out.empty()) out += ", ";
        out += "[" + p.aspect + ", " + std::string(to_string(p.polarity)) + "]";
    }
    return out;
}

ParseResult parse_pairs(std::string_view text) {
    ParseResult result;
    if (trim(text) == "NONE") return result;
    std::size_t pos = 0;
    while ((pos = text.find('[', pos)) != std::string_view::npos) {
        const auto close = text.find(']', pos + 1);
        if (close == std::string_view::npos) {
            result.diagnostics.push_back("unterminated group at offset " + std::to_string(pos) + ": '" +
                                         std::string(text.substr(pos)) + "'");
            break;
        }
        const auto nested = text.find('[', pos + 1);
        if (nested != std::string_view::npos && nested < close) {
            result.diagnostics.push_back("unterminated group at offset " + std::to_string(pos) + ": '" +
                                         std::string(text.substr(pos, nested - pos)) + "'");
            pos = nested;
            continue;
        }
        const std::string_view group = text.substr(pos + 1, close - pos - 1);
        const std::string raw = "[" + std::string(group) + "]";
        pos = close + 1;
        const auto comma = group.rfind(',');
        if (comma == std::string_view::npos) {
            result.diagnostics.push_back("missing comma in " + raw);
            continue;
        }
        std::string aspect = trim(group.substr(0, comma));
        const auto polarity = parse_polarity(group.substr(comma + 1));
        if (aspect.empty()) {
            result.diagnostics.push_back("empty aspect in " + raw);
            continue;
        }
        if (!polarity) {
            result.diagnostics.push_back("unknown polarity in " + raw);
            continue;
        }
        result.pairs.push_back({std::move(aspect), *polarity});
    }
    return result;
}

std::string render_example(const PromptTemplate& tpl, const SentenceRecord& exemplar) {
    std::string block = replace_once(tpl.example, PromptTemplate::kExampleInput, exemplar.text());
    return replace_once(std::move(block), PromptTemplate::kExampleOutput, serialize_pairs(exemplar.pairs));
}

PromptRecord render_prompt(const PromptTemplate& tpl, const SentenceRecord& query,
                           std::span<const SentenceRecord* const> exemplars) {
    tpl.validate();
    PromptRecord rec;
    rec.instruction = tpl.instruction;
    for (const SentenceRecord* ex : exemplars) {
        if (!ex) throw Error("render_prompt: null exemplar");
        rec.instruction += "\n\n";
        rec.instruction += render_example(tpl, *ex);
    }
    rec.input = query.text();
    rec.output = serialize_pairs(query.pairs);
    return rec;
}

std::string serialize_prompt_record(const PromptRecord& rec) {
    ordered_json j;
    j["instruction"] = rec.instruction;
    j["input"] = rec.input;
    j["output"] = rec.output;
    return j.dump();
}

std::string render_sft_dataset(const Corpus& corpus, const Corpus& exemplar_source, const FeatureIndex& index,
                               const Checkpoint& checkpoint, const PromptTemplate& tpl,
                               const RetrievalPolicy& policy) {
    if (index.checkpoint_digest() != checkpoint_digest(checkpoint)) {
        throw ValidationError("index was built from a different checkpoint (digest mismatch)");
    }
    std::string out;
    for (const auto& rec : corpus.records()) {
        const auto exemplars = retrieve_exemplars(index, rec, checkpoint.model, policy);
        std::vector<const SentenceRecord*> blocks;
        for (const auto& ex : exemplars) {
            const auto row = exemplar_source.index_of(ex.record_id);
            if (!row) throw ValidationError("index id '" + ex.record_id + "' is not in the exemplar corpus");
            blocks.push_back(&exemplar_source.record(*row));
        }
        out += serialize_prompt_record(render_prompt(tpl, rec, blocks));
        out += '\n';
    }
    return out;
}

std::size_t emit_sft_dataset(const Corpus& corpus, const Corpus& exemplar_source, const FeatureIndex& index,
                             const Checkpoint& checkpoint, const PromptTemplate& tpl, const RetrievalPolicy& policy,
                             const std::filesystem::path& path) {
    write_text_file(path, render_sft_dataset(corpus, exemplar_source, index, checkpoint, tpl, policy));
    return corpus.size();
}

std::string normalize_aspect(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return out;
}

double ClassScore::precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
double ClassScore::recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
double ClassScore::f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

double DomainScore::macro_f1() const {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& c : classes) {
        if (!c.present()) continue;
        sum += c.f1();
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

namespace {

void score_sentence(const std::vector<ParsedPair>& gold, const std::vector<ParsedPair>& predicted,
                    std::array<DomainScore*, 2> targets) {
    std::vector<bool> used(gold.size(), false);
    auto bump = [&](Polarity p, std::size_t ClassScore::*field) {
        for (DomainScore* t : targets) ++(t->classes[static_cast<std::size_t>(p)].*field);
    };
    for (const auto& pred : predicted) {
        const std::string key = normalize_aspect(pred.aspect);
        bool matched = false;
        for (std::size_t g = 0; g < gold.size(); ++g) {
            if (used[g] || gold[g].polarity != pred.polarity || normalize_aspect(gold[g].aspect) != key) continue;
            used[g] = true;
            matched = true;
            break;
        }
        bump(pred.polarity, matched ? &ClassScore::tp : &ClassScore::fp);
    }
    for (std::size_t g = 0; g < gold.size(); ++g)
        if (!used[g]) bump(gold[g].polarity, &ClassScore::fn);
}

} // namespace

EvalReport evaluate_predictions(const Corpus& gold, const std::map<std::string, std::string>& predictions) {
    for (const auto& [id, text] : predictions) {
        if (!gold.index_of(id)) throw ValidationError("prediction for unknown id '" + id + "'");
    }
    EvalReport report;
    for (const auto& rec : gold.records()) {
        std::vector<ParsedPair> g;
        for (const auto& p : rec.pairs) g.push_back({p.aspect, p.polarity});
        std::vector<ParsedPair> pred;
        if (auto it = predictions.find(rec.id); it != predictions.end()) {
            auto parsed = parse_pairs(it->second);
            pred = std::move(parsed.pairs);
            for (auto& d : parsed.diagnostics) report.diagnostics.push_back(rec.id + ": " + d);
        }
        score_sentence(g, pred, {&report.per_domain[rec.domain], &report.overall});
    }
    return report;
}

std::map<std::string, std::string> load_predictions(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = "predictions line " + std::to_string(line_no) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError(where + "malformed JSON");
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_string() ||
            !j["text"].is_string() || j.size() != 2) {
            throw ValidationError(where + "expected an object with string keys \"id\" and \"text\"");
        }
        if (!out.emplace(j["id"].get<std::string>(), j["text"].get<std::string>()).second) {
            throw ValidationError(where + "duplicate id '" + j["id"].get<std::string>() + "'");
        }
    }
    return out;
}

} // namespace featret

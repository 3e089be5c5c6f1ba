#include "featret/synthetic.hpp"

#include "featret/error.hpp"

#include <array>
#include <random>
#include <set>

namespace featret {

namespace {

struct Lexicon {
    std::string domain;
    std::vector<std::vector<std::string>> aspects;
    std::vector<std::string> positive;
    std::vector<std::string> negative;
    std::vector<std::string> places;
    std::string preposition;
};

const std::array<Lexicon, 3>& lexicons() {
    static const std::array<Lexicon, 3> lex{{
        {"restaurant",
         {{"food"}, {"sushi"}, {"service"}, {"waiter"}, {"dessert"}, {"wine"}, {"pasta"}, {"menu"}, {"cooked", "food"},
          {"fish", "tacos"}},
         {"delicious", "tasty", "fresh", "flavorful"},
         {"bland", "stale", "greasy", "overcooked"},
         {"restaurant", "bistro", "diner"},
         "at"},
        {"laptop",
         {{"battery"}, {"screen"}, {"keyboard"}, {"processor"}, {"trackpad"}, {"speakers"}, {"charger"},
          {"battery", "life"}, {"screen", "resolution"}, {"hard", "drive"}},
         {"fast", "sharp", "responsive", "reliable"},
         {"sluggish", "dim", "flimsy", "glitchy"},
         {"laptop", "notebook", "machine"},
         "on"},
        {"hotel",
         {{"room"}, {"bed"}, {"pool"}, {"breakfast"}, {"lobby"}, {"view"}, {"shower"}, {"front", "desk"},
          {"room", "service"}, {"parking", "lot"}},
         {"spacious", "clean", "cozy", "quiet"},
         {"dirty", "noisy", "cramped", "shabby"},
         {"hotel", "resort", "inn"},
         "at"},
    }};
    return lex;
}

const std::vector<std::string> kSharedPositive{"great", "excellent", "wonderful"};
const std::vector<std::string> kSharedNegative{"terrible", "awful", "disappointing"};
const std::vector<std::string> kNeutral{"average", "okay", "ordinary"};
const std::vector<std::string> kAdverbs{"very", "really", "quite"};

class Builder {
public:
    std::size_t add(std::string token, std::string tag) {
        rec.tokens.push_back(std::move(token));
        rec.pos_tags.push_back(std::move(tag));
        heads_.push_back({-2, ""});
        return rec.tokens.size() - 1;
    }

    // Compound nouns attach to their last word, which is returned as the phrase head.
    std::size_t add_aspect(const std::vector<std::string>& words, Polarity polarity) {
        const std::size_t first = rec.tokens.size();
        for (const auto& w : words) add(w, "NN");
        const std::size_t head = rec.tokens.size() - 1;
        for (std::size_t i = first; i < head; ++i) attach(i, head, "compound");
        rec.pairs.push_back({join_tokens(rec.tokens, first, head), {first, head}, polarity});
        return head;
    }

    void attach(std::size_t dependent, long head, std::string rel) { heads_.at(dependent) = {head, std::move(rel)}; }

    SentenceRecord finish() {
        for (std::size_t i = 0; i < heads_.size(); ++i) {
            if (heads_[i].first == -2) throw Error("synthetic pattern left token " + std::to_string(i) + " unattached");
            rec.dep_edges.push_back({static_cast<long>(i), heads_[i].first, heads_[i].second});
        }
        return std::move(rec);
    }

    SentenceRecord rec;

private:
    std::vector<std::pair<long, std::string>> heads_;
};

class Generator {
public:
    explicit Generator(std::uint64_t seed) : rng_(seed) {}

    SentenceRecord sentence(const Lexicon& lex) {
        Builder b;
        switch (pick(std::size_t{5})) {
        case 0: copula(b, lex); break;
        case 1: contrast(b, lex); break;
        case 2: verb(b, lex); break;
        case 3: adverb(b, lex); break;
        default: coordinated(b, lex); break;
        }
        return b.finish();
    }

private:
    std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
    template <typename T>
    const T& pick(const std::vector<T>& v) { return v[pick(v.size())]; }

    Polarity polarity(bool allow_neutral = true) {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
        if (u < 0.45) return Polarity::positive;
        if (u < 0.85 || !allow_neutral) return Polarity::negative;
        return Polarity::neutral;
    }

    std::string adjective(const Lexicon& lex, Polarity p) {
        if (p == Polarity::neutral) return pick(kNeutral);
        const bool shared = pick(std::size_t{4}) == 0;
        if (p == Polarity::positive) return shared ? pick(kSharedPositive) : pick(lex.positive);
        return shared ? pick(kSharedNegative) : pick(lex.negative);
    }

    // Trailing "at this restaurant", attached to the clause head.
    void place(Builder& b, const Lexicon& lex, std::size_t head) {
        const auto prep = b.add(lex.preposition, "IN");
        const auto det = b.add("this", "DT");
        const auto noun = b.add(pick(lex.places), "NN");
        b.attach(prep, static_cast<long>(noun), "case");
        b.attach(det, static_cast<long>(noun), "det");
        b.attach(noun, static_cast<long>(head), "obl");
    }

    // The A was ADJ at this PLACE .
    void copula(Builder& b, const Lexicon& lex) {
        const Polarity p = polarity();
        const auto det = b.add("The", "DT");
        const auto a = b.add_aspect(pick(lex.aspects), p);
        const auto cop = b.add("was", "VBD");
        const auto adj = b.add(adjective(lex, p), "JJ");
        place(b, lex, adj);
        const auto dot = b.add(".", ".");
        b.attach(det, static_cast<long>(a), "det");
        b.attach(a, static_cast<long>(adj), "nsubj");
        b.attach(cop, static_cast<long>(adj), "cop");
        b.attach(adj, -1, "root");
        b.attach(dot, static_cast<long>(adj), "punct");
    }

    // The A1 was ADJ1 but the A2 was ADJ2 at this PLACE .
    void contrast(Builder& b, const Lexicon& lex) {
        const Polarity p1 = polarity(false);
        const Polarity p2 = p1 == Polarity::positive ? Polarity::negative : Polarity::positive;
        const auto& first = pick(lex.aspects);
        auto second = pick(lex.aspects);
        while (second == first) second = pick(lex.aspects);
        const auto det1 = b.add("The", "DT");
        const auto a1 = b.add_aspect(first, p1);
        const auto cop1 = b.add("was", "VBD");
        const auto adj1 = b.add(adjective(lex, p1), "JJ");
        const auto cc = b.add("but", "CC");
        const auto det2 = b.add("the", "DT");
        const auto a2 = b.add_aspect(second, p2);
        const auto cop2 = b.add("was", "VBD");
        const auto adj2 = b.add(adjective(lex, p2), "JJ");
        place(b, lex, adj1);
        const auto dot = b.add(".", ".");
        b.attach(det1, static_cast<long>(a1), "det");
        b.attach(a1, static_cast<long>(adj1), "nsubj");
        b.attach(cop1, static_cast<long>(adj1), "cop");
        b.attach(adj1, -1, "root");
        b.attach(cc, static_cast<long>(adj2), "cc");
        b.attach(det2, static_cast<long>(a2), "det");
        b.attach(a2, static_cast<long>(adj2), "nsubj");
        b.attach(cop2, static_cast<long>(adj2), "cop");
        b.attach(adj2, static_cast<long>(adj1), "conj");
        b.attach(dot, static_cast<long>(adj1), "punct");
    }

    // I VERB the A at this PLACE .
    void verb(Builder& b, const Lexicon& lex) {
        const Polarity p = polarity(false);
        static const std::vector<std::string> liked{"loved", "enjoyed"};
        static const std::vector<std::string> disliked{"hated", "disliked"};
        const auto subj = b.add("I", "PRP");
        const auto v = b.add(p == Polarity::positive ? pick(liked) : pick(disliked), "VBD");
        const auto det = b.add("the", "DT");
        const auto a = b.add_aspect(pick(lex.aspects), p);
        place(b, lex, v);
        const auto dot = b.add(".", ".");
        b.attach(subj, static_cast<long>(v), "nsubj");
        b.attach(v, -1, "root");
        b.attach(det, static_cast<long>(a), "det");
        b.attach(a, static_cast<long>(v), "dobj");
        b.attach(dot, static_cast<long>(v), "punct");
    }

    // The A is ADV ADJ at this PLACE .
    void adverb(Builder& b, const Lexicon& lex) {
        const Polarity p = polarity(false);
        const auto det = b.add("The", "DT");
        const auto a = b.add_aspect(pick(lex.aspects), p);
        const auto cop = b.add("is", "VBZ");
        const auto adv = b.add(pick(kAdverbs), "RB");
        const auto adj = b.add(adjective(lex, p), "JJ");
        place(b, lex, adj);
        const auto dot = b.add(".", ".");
        b.attach(det, static_cast<long>(a), "det");
        b.attach(a, static_cast<long>(adj), "nsubj");
        b.attach(cop, static_cast<long>(adj), "cop");
        b.attach(adv, static_cast<long>(adj), "advmod");
        b.attach(adj, -1, "root");
        b.attach(dot, static_cast<long>(adj), "punct");
    }

    // The A1 and the A2 were ADJ at this PLACE .
    void coordinated(Builder& b, const Lexicon& lex) {
        const Polarity p = polarity();
        const auto& first = pick(lex.aspects);
        auto second = pick(lex.aspects);
        while (second == first) second = pick(lex.aspects);
        const auto det1 = b.add("The", "DT");
        const auto a1 = b.add_aspect(first, p);
        const auto cc = b.add("and", "CC");
        const auto det2 = b.add("the", "DT");
        const auto a2 = b.add_aspect(second, p);
        const auto cop = b.add("were", "VBD");
        const auto adj = b.add(adjective(lex, p), "JJ");
        place(b, lex, adj);
        const auto dot = b.add(".", ".");
        b.attach(det1, static_cast<long>(a1), "det");
        b.attach(a1, static_cast<long>(adj), "nsubj");
        b.attach(cc, static_cast<long>(a2), "cc");
        b.attach(det2, static_cast<long>(a2), "det");
        b.attach(a2, static_cast<long>(a1), "conj");
        b.attach(cop, static_cast<long>(adj), "cop");
        b.attach(adj, -1, "root");
        b.attach(dot, static_cast<long>(adj), "punct");
    }

    std::mt19937_64 rng_;
};

} // namespace

std::vector<SentenceRecord> generate_synthetic_records(const SyntheticOptions& options) {
    Generator gen(options.seed);
    std::vector<SentenceRecord> out;
    std::set<std::string> texts;
    const auto& lex = lexicons();
    for (std::size_t i = 0; i < options.sentences; ++i) {
        const Lexicon& l = lex[i % lex.size()];
        SentenceRecord rec;
        for (int attempt = 0;; ++attempt) {
            if (attempt == 1000) throw Error("synthetic generator ran out of distinct sentences");
            rec = gen.sentence(l);
            if (texts.insert(rec.text()).second) break;
        }
        rec.id = options.id_prefix + std::to_string(options.first_id + i);
        rec.domain = l.domain;
        out.push_back(std::move(rec));
    }
    return out;
}

Corpus generate_synthetic_corpus(const SyntheticOptions& options) {
    return Corpus(generate_synthetic_records(options));
}

} // namespace featret

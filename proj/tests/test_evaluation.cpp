#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "msnmt/errors.hpp"
#include "msnmt/evaluation.hpp"
#include "msnmt/synthetic.hpp"

using namespace msnmt;

namespace {

// Counts n-grams by joining tokens into strings and scanning with nested loops.
double brute_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  double match[4] = {}, total[4] = {};
  double hl = 0, rl = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hl += h.size();
    rl += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      auto gram = [n](const Sentence& x, std::size_t i) {
        std::string g;
        for (std::size_t j = 0; j < n; ++j) g += x[i + j] + "\x1f";
        return g;
      };
      std::vector<std::string> hg, rg;
      for (std::size_t i = 0; i + n <= h.size(); ++i) hg.push_back(gram(h, i));
      for (std::size_t i = 0; i + n <= r.size(); ++i) rg.push_back(gram(r, i));
      total[n - 1] += hg.size();
      std::set<std::string> distinct(hg.begin(), hg.end());
      for (const auto& g : distinct) {
        const auto ch = std::count(hg.begin(), hg.end(), g);
        const auto cr = std::count(rg.begin(), rg.end(), g);
        match[n - 1] += std::min(ch, cr);
      }
    }
  }
  double logp = 0;
  for (int i = 0; i < 4; ++i) {
    if (total[i] == 0 || match[i] == 0) return 0.0;
    logp += std::log(match[i] / total[i]);
  }
  const double bp = hl < rl ? std::exp(1 - rl / hl) : 1.0;
  return 100 * bp * std::exp(logp / 4);
}

Sentence words(const char* s) { return split_tokens(s); }

}  // namespace

TEST_CASE("bleu basics") {
  const std::vector<Sentence> refs{words("the cat sat on the mat"), words("a dog ran in the park today")};
  CHECK(bleu(refs, refs).score == 100.0);
  const std::vector<Sentence> none{words("x y z w"), words("q r s t u")};
  CHECK(bleu(none, refs).score == 0.0);
  CHECK_THROWS_AS(bleu(std::span(none).first(1), refs), ContractError);

  const auto s = sentence_stats(words("the the cat"), words("the cat sat"));
  CHECK(s.matches[0] == 2);
  CHECK(s.totals[0] == 3);
  CHECK(s.matches[1] == 1);
  CHECK(s.totals[1] == 2);
  CHECK(s.matches[2] == 0);
  CHECK(s.totals[3] == 0);
  CHECK(bleu_from_stats(s).score == 0.0);
  CHECK(bleu_from_stats(s).precisions[0] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("brevity penalty") {
  const std::vector<Sentence> refs{words("a b c d e f g h")};
  const std::vector<Sentence> hyps{words("a b c d e f")};
  const auto b = bleu(hyps, refs);
  CHECK(b.brevity_penalty == doctest::Approx(std::exp(1.0 - 8.0 / 6.0)).epsilon(1e-15));
  CHECK(b.score == doctest::Approx(100.0 * std::exp(1.0 - 8.0 / 6.0)).epsilon(1e-12));
}

TEST_CASE("bleu agrees with a brute-force counter") {
  Rng rng(9);
  std::uniform_int_distribution<int> len(0, 9), tok(0, 4);
  for (int c = 0; c < 50; ++c) {
    std::vector<Sentence> hyps, refs;
    for (int s = 0; s < 6; ++s) {
      Sentence h(len(rng)), r(1 + len(rng));
      for (auto& w : h) w = "w" + std::to_string(tok(rng));
      for (auto& w : r) w = "w" + std::to_string(tok(rng));
      hyps.push_back(h);
      refs.push_back(r);
    }
    CHECK(std::abs(bleu(hyps, refs).score - brute_bleu(hyps, refs)) <= 1e-9);
    // sentence order does not matter
    std::vector<std::size_t> perm{5, 3, 1, 0, 2, 4};
    std::vector<Sentence> ph, pr;
    for (auto i : perm) {
      ph.push_back(hyps[i]);
      pr.push_back(refs[i]);
    }
    CHECK(bleu(ph, pr).score == doctest::Approx(bleu(hyps, refs).score).epsilon(1e-12));
  }
}

TEST_CASE("average lagging") {
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    DecodeTrace t;
    t.source_length = 9;
    for (std::size_t s = 1; s <= 9; ++s) t.g.push_back(prefix_length(Policy::wait_k(k), s, 9));
    CHECK(average_lagging(t) == static_cast<double>(k));
  }
  DecodeTrace full{std::vector<std::size_t>(4, 6), 6};
  CHECK(average_lagging(full) == 6.0);
  CHECK(average_lagging(DecodeTrace{{1}, 1}) == 1.0);
  CHECK_THROWS_AS(average_lagging(DecodeTrace{{}, 3}), DomainError);

  // |Y| = 2|X|: r = 2, g = 2,3,4,4,...; tau = 3
  DecodeTrace longer{{2, 3, 4, 4, 4, 4, 4, 4}, 4};
  CHECK(average_lagging(longer) == doctest::Approx((2.0 + 2.5 + 3.0) / 3.0));
  // never fully read: tau falls back to |Y|
  DecodeTrace cut{{1, 2}, 5};
  CHECK(average_lagging(cut) == doctest::Approx((1.0 + (2.0 - 2.5)) / 2.0));

  const std::vector<DecodeTrace> both{full, DecodeTrace{{1}, 1}};
  const auto al = average_lagging(both);
  CHECK(al.mean == 3.5);
  CHECK(al.sentences.size() == 2);
}

TEST_CASE("paired bootstrap") {
  std::vector<Sentence> refs, good, bad;
  for (int i = 0; i < 50; ++i) {
    refs.push_back(words("one two three four five"));
    good.push_back(refs.back());
    bad.push_back(words("six seven eight nine ten"));
  }
  const auto self = bootstrap_significance(good, good, refs, 1000, 0.05, 3);
  CHECK(self.difference == 0.0);
  CHECK(self.p_value == 1.0);
  CHECK(!self.significant);

  const auto clear = bootstrap_significance(good, bad, refs, 1000, 0.05, 3);
  CHECK(clear.difference == 100.0);
  CHECK(clear.p_value == 0.0);
  CHECK(clear.significant);
  const auto reversed = bootstrap_significance(bad, good, refs, 1000, 0.05, 3);
  CHECK(reversed.difference == -100.0);
  CHECK(reversed.significant);

  // a mixed pair: reproducible under a seed
  Rng rng(1);
  std::vector<Sentence> mix = good;
  for (int i = 0; i < 50; i += 3) mix[i] = bad[i];
  const auto a = bootstrap_significance(good, mix, refs, 500, 0.05, 7);
  const auto b = bootstrap_significance(good, mix, refs, 500, 0.05, 7);
  CHECK(a.p_value == b.p_value);
  CHECK(a.p_value >= 0.0);
  CHECK(a.p_value <= 1.0);

  CHECK_THROWS_AS(bootstrap_significance(std::span(good).first(3), good, refs), ContractError);
  CHECK_THROWS_AS(bootstrap_significance(good, good, refs, 50), ContractError);
}

TEST_CASE("incongruent pairing is a derangement") {
  for (std::size_t n = 2; n <= 11; ++n) {
    const auto r = incongruent_pairing(n);
    std::set<std::size_t> images(r.image_for.begin(), r.image_for.end());
    CHECK(images.size() == n);
    for (std::size_t i = 0; i < n; ++i) CHECK(r.image_for[i] != i);
    CHECK(r.notes.size() == n % 2);
  }
  CHECK(incongruent_pairing(4).image_for == std::vector<std::size_t>{3, 2, 1, 0});
  CHECK_THROWS_AS(incongruent_pairing(1), ContractError);
}

TEST_CASE("entity counting on the cliff sentence") {
  std::vector<SentencePair> pairs(1);
  pairs[0].id = 1;
  pairs[0].source = words("a person rappelling a cliff above a body of water .");
  pairs[0].target = words("海 の 上 に ある 断崖 を 降り て いる 一 人 の 男性 。");
  EntityAnnotation ann{1,
                       {{"p", "people", {1, 2}, {11, 14}, false},
                        {"c", "scene", {4, 5}, {6, 6}, false},
                        {"w", "scene", {7, 10}, {1, 1}, false}}};
  const std::vector<EntityAnnotation> anns{ann};
  const auto at3 = count_total_entities(anns, pairs, 3);
  REQUIRE(at3.size() == 1);
  CHECK(at3[0].entity.id == "w");
  CHECK(at3[0].target_tokens == words("海"));
  CHECK(count_total_entities(anns, pairs, 11 + 15).empty());

  const std::vector<Sentence> hyp{words("海 の 上 で 男性 が")};
  CHECK(count_correct_entities(hyp, at3) == 1);
  const std::vector<Sentence> empty{Sentence{}};
  CHECK(count_correct_entities(empty, at3) == 0);

  auto excluded = anns;
  excluded[0].entities[2].excluded = true;
  CHECK(count_total_entities(excluded, pairs, 3).empty());

  auto broken = anns;
  broken[0].entities[0].target = {14, 16};
  CHECK_THROWS_AS(count_total_entities(broken, pairs, 3), DataError);
}

TEST_CASE("entity totals shrink as k grows") {
  SyntheticSpec spec;
  spec.train = 10;
  spec.dev = 10;
  spec.test = 100;
  const auto d = generate_synthetic_dataset(spec, 3);
  std::size_t objects = 0;
  for (const auto& a : d.test.entities)
    for (const auto& e : a.entities) objects += e.type == "object";
  std::size_t previous = count_total_entities(d.test.entities, d.test.pairs, 1).size();
  std::size_t counted_objects = 0;
  for (const auto& c : count_total_entities(d.test.entities, d.test.pairs, 1)) counted_objects += c.entity.type == "object";
  CHECK(objects == 100);
  CHECK(counted_objects == objects);
  for (std::size_t k = 2; k <= 8; ++k) {
    const std::size_t now = count_total_entities(d.test.entities, d.test.pairs, k).size();
    CHECK(now <= previous);
    previous = now;
  }
  CHECK(previous == 0);
}

TEST_CASE("reports") {
  const auto dir = fs::temp_directory_path() / "msnmt_eval_reports";
  fs::create_directories(dir);
  Report a;
  a.add("bleu", "score", 40.0);
  a.add("bleu", "system", "x");
  a.add("al", "mean", 3.0);
  Report b;
  b.add("bleu", "score", 50.0);
  b.add("bleu", "system", "y");
  b.add("al", "mean", 4.0);
  a.save(dir / "a.txt");
  const auto back = Report::load(dir / "a.txt");
  CHECK(back.str() == a.str());
  CHECK(a.str().rfind("[bleu]\nscore = 40\n", 0) == 0);
  const std::vector<Report> both{a, b};
  const auto avg = average_reports(both);
  CHECK(avg.sections().at("bleu")[0].second == "45");
  CHECK(avg.sections().at("bleu")[1].second == "x");
  CHECK(avg.sections().at("al")[0].second == "3.5");

  const std::vector<PlotRow> rows{{"1", 10, 20, 1.5, 1.5}, {"full", 30, 31, 6, 6}};
  write_plot_csv(rows, dir / "plot.csv");
  std::ifstream in(dir / "plot.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "k,bleu_snmt,bleu_msnmt,al_snmt,al_msnmt");
  CHECK(first == "1,10,20,1.5,1.5");
  fs::remove_all(dir);

  const std::vector<EntityRow> table{{1, 10, {{"S", 2}, {"M", 4}}}, {3, 5, {{"S", 1}}}};
  CHECK(format_entity_table(table) == "k\ttotal\tM\tS\n1\t10\t4\t2\n3\t5\t-\t1\n");
}

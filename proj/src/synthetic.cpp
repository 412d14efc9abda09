#include "aqg/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "json.hpp"

#include "aqg/errors.hpp"
#include "aqg/rng.hpp"

namespace aqg {

namespace {

const std::vector<std::string> kAdjectives = {"quiet", "brave", "tiny", "old",
                                              "clever", "lazy", "swift", "gentle"};
const std::vector<std::string> kNouns = {"fox",   "owl",    "bear",  "heron", "otter", "wolf",
                                         "crow",  "badger", "moose", "lynx",  "hare",  "seal",
                                         "raven", "toad",   "stork", "mole"};
const std::vector<std::string> kPlaces = {"paris", "oslo",  "lima",   "cairo",
                                          "delhi", "quito", "dublin", "hanoi"};
const std::vector<std::string> kColours = {"red", "blue", "green", "grey",
                                           "white", "black", "golden", "brown"};
const std::vector<std::string> kNames = {"ada",  "boris", "clara", "dmitri",
                                         "elsa", "felix", "greta", "hugo"};

}  // namespace

std::vector<RawExample> synthetic_corpus(std::size_t count, std::uint64_t seed) {
  const std::size_t pairs = kAdjectives.size() * kNouns.size();
  if (count == 0 || count > pairs) {
    throw ConfigError("synthetic corpus size must be in [1, " + std::to_string(pairs) + "]");
  }
  std::mt19937_64 rng(derive_seed(seed, "synthetic"));
  std::vector<std::size_t> subjects(pairs);
  for (std::size_t i = 0; i < pairs; ++i) subjects[i] = i;
  std::shuffle(subjects.begin(), subjects.end(), rng);
  auto pick = [&](const std::vector<std::string>& words) {
    return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
  };

  std::vector<RawExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string subject =
        kAdjectives[subjects[i] / kNouns.size()] + " " + kNouns[subjects[i] % kNouns.size()];
    const std::string place = pick(kPlaces), colour = pick(kColours), name = pick(kNames);
    const std::string s1 = "The " + subject + " lived in " + place + ".";
    const std::string s2 = "The " + subject + " was " + colour + ".";
    const std::string s3 = "People called the " + subject + " " + name + ".";

    RawExample ex;
    ex.id = "syn-" + std::string(i < 10 ? "00" : i < 100 ? "0" : "") + std::to_string(i);
    ex.passage = s1 + " " + s2 + " " + s3;
    switch (i % 3) {
      case 0:
        ex.answer = place;
        ex.answer_start = s1.size() - 1 - place.size();
        ex.question = "Where did the " + subject + " live?";
        break;
      case 1:
        ex.answer = colour;
        ex.answer_start = s1.size() + 1 + s2.size() - 1 - colour.size();
        ex.question = "What colour was the " + subject + "?";
        break;
      default:
        ex.answer = name;
        ex.answer_start = s1.size() + 1 + s2.size() + 1 + s3.size() - 1 - name.size();
        ex.question = "What did people call the " + subject + "?";
        break;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::string to_squad_json(const std::vector<RawExample>& examples) {
  nlohmann::ordered_json paragraphs = nlohmann::ordered_json::array();
  for (const auto& ex : examples) {
    nlohmann::ordered_json answer;
    answer["text"] = ex.answer;
    answer["answer_start"] = ex.answer_start;
    nlohmann::ordered_json qa;
    qa["id"] = ex.id;
    qa["question"] = ex.question;
    qa["answers"] = nlohmann::ordered_json::array({answer});
    nlohmann::ordered_json para;
    para["context"] = ex.passage;
    para["qas"] = nlohmann::ordered_json::array({qa});
    paragraphs.push_back(para);
  }
  nlohmann::ordered_json article;
  article["title"] = "synthetic";
  article["paragraphs"] = paragraphs;
  nlohmann::ordered_json doc;
  doc["version"] = "1.1";
  doc["data"] = nlohmann::ordered_json::array({article});
  return doc.dump() + "\n";
}

std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& dir,
                                                           std::size_t count, std::size_t train,
                                                           std::uint64_t seed) {
  if (train > count) throw ConfigError("train split larger than the corpus");
  const auto examples = synthetic_corpus(count, seed);
  std::filesystem::create_directories(dir);
  const auto squad = dir / "squad.json";
  const auto train_ids = dir / "train.ids";
  const auto dev_ids = dir / "dev.ids";
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    f << text;
  };
  write(squad, to_squad_json(examples));
  std::string tr, dv;
  for (std::size_t i = 0; i < examples.size(); ++i) (i < train ? tr : dv) += examples[i].id + "\n";
  write(train_ids, tr);
  write(dev_ids, dv);
  return {squad, train_ids, dev_ids};
}

}  // namespace aqg

#include "rofl/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <span>
#include <string_view>

#include "rofl/error.hpp"
#include "rofl/rng.hpp"

namespace rofl::corpus {

namespace {

using Words = std::span<const std::string_view>;

struct Topic {
  Words nouns;
  Words places;
  Words adjectives;
  Words verbs;  // past tense, transitive
};

constexpr std::string_view kFarmNouns[] = {"farmer", "horse", "dog", "goat", "miller", "shepherd", "child",
                                           "hen", "cow", "baker", "girl", "boy", "fox", "owl"};
constexpr std::string_view kFarmPlaces[] = {"barn", "field", "river", "village", "orchard", "mill", "hill",
                                            "meadow", "well", "market"};
constexpr std::string_view kFarmAdj[] = {"old", "quiet", "brown", "tired", "happy", "small", "young",
                                         "green", "gentle", "lazy"};
constexpr std::string_view kFarmVerbs[] = {"found", "watched", "carried", "followed", "fed", "called", "saw",
                                           "helped", "chased", "visited"};

constexpr std::string_view kCityNouns[] = {"engineer", "driver", "clerk", "robot", "printer", "banker",
                                           "tram", "student", "signal", "server", "doctor", "pilot"};
constexpr std::string_view kCityPlaces[] = {"station", "office", "tower", "garage", "library", "bridge",
                                            "factory", "harbor", "plaza", "tunnel"};
constexpr std::string_view kCityAdj[] = {"busy", "electric", "grey", "modern", "noisy", "fast", "broken",
                                         "bright", "careful", "clever"};
constexpr std::string_view kCityVerbs[] = {"repaired", "tested", "measured", "opened", "built", "moved",
                                           "checked", "wired", "sold", "copied"};

constexpr std::string_view kSeaNouns[] = {"sailor", "captain", "whale", "gull", "crab", "fisher", "diver",
                                          "boat", "lantern", "pirate", "turtle", "merchant"};
constexpr std::string_view kSeaPlaces[] = {"island", "reef", "shore", "dock", "lighthouse", "cove", "bay",
                                           "deck", "cliff", "lagoon"};
constexpr std::string_view kSeaAdj[] = {"salty", "wet", "blue", "stormy", "calm", "deep", "wild", "silver",
                                        "golden", "distant"};
constexpr std::string_view kSeaVerbs[] = {"pulled", "sank", "steered", "spotted", "rowed", "hauled", "caught",
                                          "painted", "lifted", "warned"};

constexpr std::string_view kSkyNouns[] = {"astronomer", "comet", "monk", "eagle", "poet", "king", "queen",
                                          "wizard", "knight", "scribe", "dragon", "traveler"};
constexpr std::string_view kSkyPlaces[] = {"castle", "temple", "mountain", "valley", "forest", "garden",
                                           "palace", "desert", "cave", "court"};
constexpr std::string_view kSkyAdj[] = {"ancient", "wise", "proud", "strange", "bold", "cold", "dark",
                                        "royal", "hidden", "noble"};
constexpr std::string_view kSkyVerbs[] = {"praised", "greeted", "guarded", "studied", "crowned", "named",
                                          "trusted", "feared", "thanked", "sought"};

const Topic kTopics[kSliceCount] = {
    {kFarmNouns, kFarmPlaces, kFarmAdj, kFarmVerbs},
    {kCityNouns, kCityPlaces, kCityAdj, kCityVerbs},
    {kSeaNouns, kSeaPlaces, kSeaAdj, kSeaVerbs},
    {kSkyNouns, kSkyPlaces, kSkyAdj, kSkyVerbs},
};

constexpr std::string_view kPreps[] = {"near", "behind", "inside", "across", "beside", "toward"};
constexpr std::string_view kTimes[] = {"In the morning", "At noon", "Later", "Before dawn", "After the rain",
                                       "That evening", "Every day", "Once"};
constexpr std::string_view kConnectives[] = {"and then", "because", "while", "so", "but"};
constexpr std::string_view kIntransitive[] = {"slept", "waited", "sang", "rested", "laughed", "worked", "walked"};

std::string_view pick(Rng& rng, Words words) { return words[rng.index(words.size())]; }

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string noun_phrase(Rng& rng, const Topic& t) {
  std::string out = "the ";
  if (rng.index(2) == 0) {
    out += pick(rng, t.adjectives);
    out += ' ';
  }
  out += pick(rng, t.nouns);
  return out;
}

std::string clause(Rng& rng, const Topic& t) {
  std::string out = noun_phrase(rng, t);
  switch (rng.index(3)) {
    case 0:
      out += ' ';
      out += pick(rng, t.verbs);
      out += ' ';
      out += noun_phrase(rng, t);
      break;
    case 1:
      out += ' ';
      out += pick(rng, kIntransitive);
      out += ' ';
      out += pick(rng, kPreps);
      out += " the ";
      out += pick(rng, t.places);
      break;
    default:
      out += ' ';
      out += pick(rng, t.verbs);
      out += ' ';
      out += noun_phrase(rng, t);
      out += " at the ";
      out += pick(rng, t.places);
      break;
  }
  return out;
}

std::string sentence(Rng& rng, const Topic& t) {
  std::string out;
  if (rng.index(3) == 0) {
    out = std::string(pick(rng, kTimes)) + ", " + clause(rng, t);
  } else {
    out = capitalize(clause(rng, t));
  }
  if (rng.index(3) == 0) {
    out += ' ';
    out += pick(rng, kConnectives);
    out += ' ';
    out += clause(rng, t);
  }
  out += '.';
  return out;
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

SftExample make_example(std::uint32_t index, Rng& rng) {
  // Instruction datasets reuse the topic vocabularies in rotation.
  const Topic& topic = kTopics[index % kSliceCount];
  switch (index) {
    case 0: {
      const std::string s = sentence(rng, topic);
      return {"Rewrite in capital letters: " + s, upper(s)};
    }
    case 1: {
      std::string s = clause(rng, topic);
      auto words = split_words(s);
      std::reverse(words.begin(), words.end());
      std::string r;
      for (std::size_t i = 0; i < words.size(); ++i) r += (i ? " " : "") + words[i];
      return {"Reverse the order of the words: " + s, r};
    }
    case 2: {
      const auto a = rng.index(100);
      const auto b = rng.index(100);
      if (rng.index(2) == 0) {
        return {"What is " + std::to_string(a) + " plus " + std::to_string(b) + "?",
                "The answer is " + std::to_string(a + b) + "."};
      }
      return {"What is " + std::to_string(a) + " times " + std::to_string(b % 10) + "?",
              "The answer is " + std::to_string(a * (b % 10)) + "."};
    }
    case 3: {
      const std::string noun(pick(rng, topic.nouns));
      const std::string place(pick(rng, topic.places));
      return {"Where did the " + noun + " go?",
              "The " + noun + " went to the " + place + " " + std::string(pick(rng, kPreps)) + " the " +
                  std::string(pick(rng, topic.places)) + "."};
    }
    default: {
      const std::string s = sentence(rng, topic);
      const auto words = split_words(s);
      return {"How many words are in this sentence? " + s,
              "There are " + std::to_string(words.size()) + " words."};
    }
  }
}

constexpr std::string_view kDatasetNames[kDatasetCount] = {"capitals", "reverse", "arithmetic", "places", "count"};

}  // namespace

std::string text_slice(std::uint32_t slice, std::size_t bytes, std::uint64_t seed) {
  if (slice >= kSliceCount) throw InvalidArgument("corpus slice " + std::to_string(slice) + " does not exist");
  Rng rng(mix_seed(seed, 0xC0 + slice));
  const Topic& topic = kTopics[slice];
  std::string out;
  out.reserve(bytes + 256);
  while (out.size() < bytes) {
    const auto sentences = 2 + rng.index(4);
    for (std::size_t i = 0; i < sentences; ++i) {
      if (i) out += ' ';
      out += sentence(rng, topic);
    }
    out += '\n';
  }
  out.resize(bytes);
  return out;
}

SftDataset instruction_dataset(std::uint32_t index, std::size_t bytes, std::uint64_t seed) {
  if (index >= kDatasetCount) throw InvalidArgument("instruction dataset " + std::to_string(index) + " does not exist");
  Rng rng(mix_seed(seed, 0xDA7A + index));
  SftDataset out;
  std::size_t size = 0;
  while (size < bytes) {
    out.push_back(make_example(index, rng));
    size += out.back().instruction.size() + out.back().response.size();
  }
  return out;
}

std::string dataset_name(std::uint32_t index) {
  if (index >= kDatasetCount) throw InvalidArgument("instruction dataset " + std::to_string(index) + " does not exist");
  return std::string(kDatasetNames[index]);
}

std::uint32_t dataset_index(const std::string& name) {
  for (std::uint32_t i = 0; i < kDatasetCount; ++i) {
    if (name == kDatasetNames[i] || name == std::to_string(i)) return i;
  }
  throw InvalidArgument("unknown dataset '" + name + "'");
}

std::vector<std::string> natural_prompts(std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x9A7));
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sentence(rng, kTopics[0]));
  return out;
}

}  // namespace rofl::corpus

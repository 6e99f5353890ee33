#include <gtest/gtest.h>

#include "reference.hpp"
#include "rofl/digest.hpp"
#include "rofl/error.hpp"
#include "rofl/rng.hpp"

using namespace rofl;
using rofl::testing::reference_sha256;

namespace {

struct Vector {
  std::string input;
  const char* hex;
};

// FIPS 180-2 / NIST example vectors.
std::vector<Vector> nist_vectors() {
  return {
      {"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"},
      {"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"},
      {"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
       "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"},
      {std::string(1000000, 'a'), "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0"},
  };
}

}  // namespace

TEST(Digest, LibraryMatchesNistVectors) {
  for (const auto& v : nist_vectors()) EXPECT_EQ(to_hex(sha256(v.input)), v.hex);
}

TEST(Digest, ReferenceMatchesNistVectors) {
  for (const auto& v : nist_vectors()) EXPECT_EQ(to_hex(reference_sha256(v.input)), v.hex);
}

TEST(Digest, LibraryAgreesWithReferenceOnRandomInputs) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    std::string s(rng.index(300), '\0');
    for (char& c : s) c = static_cast<char>(rng.index(256));
    EXPECT_EQ(sha256(s), reference_sha256(s)) << "length " << s.size();
  }
}

TEST(Digest, IncrementalEqualsOneShot) {
  const std::string text = "the quick brown fox jumps over the lazy dog, repeatedly and at length";
  Sha256 h;
  h.update(std::string_view(text).substr(0, 5));
  h.update(std::string_view(text).substr(5, 60));
  h.update(std::string_view(text).substr(65));
  EXPECT_EQ(h.finish(), sha256(text));
}

TEST(Digest, HexRoundTrip) {
  const Digest d = sha256("abc");
  EXPECT_EQ(digest_from_hex(to_hex(d)), d);
  std::string upper = to_hex(d);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  EXPECT_EQ(digest_from_hex(upper), d);
}

TEST(Digest, HexRejectsBadInput) {
  EXPECT_THROW(digest_from_hex("abc"), FormatError);
  EXPECT_THROW(digest_from_hex(std::string(64, 'g')), FormatError);
  EXPECT_THROW(digest_from_hex(std::string(66, '0')), FormatError);
}

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cms::smiles {

// Supported subset: organic-subset atoms B C N O P S F Cl Br I, aromatic
// b c n o p s, bracket atoms with isotope / charge / H count / @ stereo,
// bonds - = # : / \ (directional parsed as single), ring closures 1-9 and
// %nn, and branches. No canonicalization, no dot-disconnected inputs.

enum class TokenKind {
  Atom,
  BracketAtom,
  Bond,
  RingClosure,
  BranchOpen,
  BranchClose,
};

struct PrimitiveToken {
  TokenKind kind;
  std::string text;
  std::size_t position = 0;  // start character index in the source
};

struct ParseError : std::runtime_error {
  ParseError(std::string reason, std::size_t position)
      : std::runtime_error(reason + " at position " + std::to_string(position)),
        reason(std::move(reason)),
        position(position) {}
  std::string reason;
  std::size_t position;
};

struct UnterminatedBracket : ParseError {
  explicit UnterminatedBracket(std::size_t position)
      : ParseError("unterminated bracket atom", position) {}
};

struct UnknownCharacter : ParseError {
  UnknownCharacter(char c, std::size_t position)
      : ParseError(std::string("unknown character '") + c + "'", position) {}
};

enum class BondOrder { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

struct Atom {
  std::string element;           // canonical symbol, e.g. "C", "Cl"
  bool aromatic = false;
  int charge = 0;
  int explicit_h = 0;            // bracket-atom H count; 0 for organic-subset atoms
  std::optional<int> isotope;
  int stereo = 0;                // 0 none, 1 '@', 2 '@@' (stored, not interpreted)
  bool bracket = false;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
};

struct MolecularGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::string source;

  int degree(int atom) const;
  // Hydrogens attached to `atom`: the bracket H count verbatim, or the
  // implied count for organic-subset atoms (standard aromatic handling:
  // ring bonds count 1 each plus one shared double bond for C/N/P).
  int hydrogen_count(int atom) const;
};

struct Validity {
  bool valid = false;
  std::optional<std::string> reason;
};

std::vector<PrimitiveToken> tokenize_primitive(std::string_view smiles);

MolecularGraph parse(std::string_view smiles);

// Never throws; failures are reported in the result.
Validity is_valid(std::string_view smiles) noexcept;

}  // namespace cms::smiles

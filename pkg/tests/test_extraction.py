"""Free-text parsing: code extraction, segmentation, and round-trips."""

import random
import string

from threatforge import extraction, stride
from threatforge.nist import CodeSet

from .conftest import make_random_graph

SPOOFING_PARAGRAPH = (
    "If the identified threat category is Spoofing, the threat might be: an "
    "attacker could impersonate a bank customer or IoT device to gain "
    "unauthorized access to the system. Spoofing can occur at the Web Service "
    "or IoT Device level. The mitigations could be: implement strong "
    "authentication mechanisms, such as multi-factor authentication (MFA) for "
    "bank customers and secure authentication for IoT devices (e.g., "
    "certificates), and use secure communication channels (e.g., TLS/SSL) to "
    "prevent identity spoofing. The related NIST 800-53 control codes would "
    "be IA-2: Identification and Authentication (Organizational Users) and "
    "SC-12: Cryptographic Key Establishment and Management."
)


def test_extract_codes_basic():
    codes = extraction.extract_codes(
        "Use IA-2 and SC-12: Cryptographic Key Establishment and Management"
    )
    assert codes == CodeSet.of("IA-2", "SC-12")


def test_extract_codes_none():
    assert len(extraction.extract_codes("no controls apply")) == 0


def test_extract_codes_unknown_family_retained_with_warning():
    text = "apply zz-9 twice, ZZ-9 again"
    codes, warnings = extraction.scan_codes(text)
    assert [c.canonical for c in codes] == ["ZZ-9"]
    assert warnings == ["unknown control family in ZZ-9"]
    assert extraction.extract_codes(text) == CodeSet.of("ZZ-9")


def test_extract_codes_ignores_lookalikes():
    text = "NIST SP 800-53 and Llama-3 and SHA-256 and e-mail and 3-D"
    assert len(extraction.extract_codes(text)) == 0


def test_extract_codes_idempotent_under_duplication():
    text = "Apply SC-7(3), then AC-3. Also sc-7."
    assert extraction.extract_codes(text + " " + text) == extraction.extract_codes(text)


def test_spoofing_paragraph_single_finding():
    parsed = extraction.parse_findings(SPOOFING_PARAGRAPH)
    assert len(parsed.findings) == 1
    finding = parsed.findings[0]
    assert finding.category is stride.StrideCategory.SPOOFING
    assert finding.codes == CodeSet.of("IA-2", "SC-12")
    assert "impersonate a bank customer" in finding.description
    assert "strong authentication" in finding.mitigation


def test_empty_input():
    parsed = extraction.parse_findings("")
    assert parsed.findings == ()
    assert parsed.unparsed_spans == ()


def test_two_numbered_blocks():
    text = (
        "1. Tampering threat against the transfer channel. Mitigation: apply SC-8\n"
        "2. Spoofing threat against the login. Mitigation: require IA-2"
    )
    parsed = extraction.parse_findings(text)
    assert [(f.category.letter, f.codes.canonical_tokens()) for f in parsed.findings] == [
        ("T", ["SC-8"]),
        ("S", ["IA-2"]),
    ]


def test_letter_headings():
    text = "S: someone impersonates the teller. Mitigation: IA-2.\nD: flood the portal. Mitigation: SC-5."
    parsed = extraction.parse_findings(text)
    assert [f.category.letter for f in parsed.findings] == ["S", "D"]


def test_markdown_headings():
    text = (
        "## Spoofing\nAn account takeover scenario.\nMitigation: enforce IA-2.\n\n"
        "## Denial of Service\nRequest flood.\nMitigation: SC-5 rate limits.\n"
    )
    parsed = extraction.parse_findings(text)
    assert [f.category.letter for f in parsed.findings] == ["S", "D"]


def test_category_free_block_goes_to_unparsed():
    text = "The weather is nice today and nothing else matters."
    parsed = extraction.parse_findings(text)
    assert parsed.findings == ()
    assert len(parsed.unparsed_spans) == 1
    offset, length = parsed.unparsed_spans[0]
    assert offset == 0
    assert length <= len(text)


def test_preamble_before_first_heading_is_unparsed():
    text = "Let me reason step by step about the system.\n\nThreat Type: Tampering\nDescription: data altered.\nMitigation: SC-8.\nNIST: SC-8"
    parsed = extraction.parse_findings(text)
    assert len(parsed.findings) == 1
    assert len(parsed.unparsed_spans) == 1
    assert parsed.unparsed_spans[0][0] == 0


def test_duplicate_findings_collapse():
    block = "Threat Type: Spoofing\nDescription: same text.\nMitigation: IA-2.\nNIST: IA-2"
    parsed = extraction.parse_findings(block + "\n\n" + block)
    assert len(parsed.findings) == 1


def test_spans_stay_in_bounds_on_random_garbage():
    rng = random.Random(31337)
    alphabet = string.ascii_letters + string.digits + " .:\n-()#"
    for _ in range(300):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 400)))
        parsed = extraction.parse_findings(text)
        for offset, length in parsed.unparsed_spans:
            assert 0 <= offset <= len(text)
            assert 0 <= offset + length <= len(text)


def test_round_trip_recovers_categories_and_codes():
    rng = random.Random(777)
    for _ in range(100):
        graph = make_random_graph(rng)
        findings = stride.enumerate_threats(graph)
        if not findings:
            continue
        parsed = extraction.parse_findings(stride.render_findings(findings))
        assert [f.category for f in parsed.findings] == [f.category for f in findings]
        assert [f.codes for f in parsed.findings] == [f.codes for f in findings]


def test_round_trip_is_text_stable(bank_account_graph):
    findings = stride.enumerate_threats(bank_account_graph)
    text = stride.render_findings(findings)
    parsed = extraction.parse_findings(text)
    assert stride.render_findings(parsed.findings) == text

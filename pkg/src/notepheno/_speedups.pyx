# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled sentence-boundary scanner.

Twin of ``notepheno._scan_py``: both implement the same rule set and must
return identical spans for every input. Keep the two in sync; the
equivalence is covered by a property test. This version walks the string
character by character in C.
"""

ABBREVIATIONS = frozenset(
    ("dr", "mr", "mrs", "ms", "prof", "vs", "e.g", "i.e", "etc", "fig", "no")
)

cdef Py_ssize_t _MAX_ABBREV_SCAN = 12


cdef inline bint _is_terminator(Py_UCS4 c):
    return c == u'.' or c == u'!' or c == u'?'


cdef inline bint _is_closer(Py_UCS4 c):
    return c == u'"' or c == u"'" or c == u')' or c == u']' or c == u'}'


cdef bint _abbrev_suppressed(unicode text, Py_ssize_t dot):
    cdef Py_ssize_t k = dot - 1
    cdef Py_ssize_t scanned = 0
    cdef Py_UCS4 c
    while k >= 0 and scanned < _MAX_ABBREV_SCAN:
        c = text[k]
        if not (c.isalnum() or c == u'.'):
            break
        k -= 1
        scanned += 1
    if scanned == _MAX_ABBREV_SCAN and k >= 0:
        c = text[k]
        if c.isalnum() or c == u'.':
            return False
    if scanned == 0:
        return False
    token = text[k + 1:dot].lower()
    if len(token) == 1 and token.isalpha():
        return True
    return token in ABBREVIATIONS


def scan_sentence_spans(unicode text):
    """Return (start, end) index pairs of sentences in ``text``, in order."""
    cdef Py_ssize_t n = len(text)
    cdef list spans = []
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t j, newlines
    cdef Py_ssize_t sent_start = -1
    cdef Py_ssize_t last_nonspace = -1
    cdef Py_UCS4 c
    while i < n:
        c = text[i]
        if sent_start < 0:
            if c.isspace():
                i += 1
                continue
            sent_start = i
        if c.isspace():
            if c == u'\n':
                j = i
                newlines = 0
                while j < n and text[j].isspace():
                    if text[j] == u'\n':
                        newlines += 1
                    j += 1
                if newlines >= 2:
                    spans.append((sent_start, last_nonspace + 1))
                    sent_start = -1
                    i = j
                    continue
            i += 1
            continue
        last_nonspace = i
        if _is_terminator(c):
            j = i + 1
            while j < n and _is_closer(text[j]):
                j += 1
            if j < n and text[j].isspace() and (c != u'.' or not _abbrev_suppressed(text, i)):
                spans.append((sent_start, j))
                sent_start = -1
                i = j
                continue
        i += 1
    if sent_start >= 0:
        spans.append((sent_start, last_nonspace + 1))
    return spans

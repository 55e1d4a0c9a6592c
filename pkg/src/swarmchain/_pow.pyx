# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled proof-of-work kernel: SHA-256 midstate over the header prefix, nonce scan in C."""

from libc.stdint cimport uint64_t

cdef extern from "openssl/evp.h" nogil:
    ctypedef struct EVP_MD_CTX:
        pass
    ctypedef struct EVP_MD:
        pass
    ctypedef struct ENGINE:
        pass
    const EVP_MD *EVP_sha256()
    EVP_MD_CTX *EVP_MD_CTX_new()
    void EVP_MD_CTX_free(EVP_MD_CTX *ctx)
    int EVP_DigestInit_ex(EVP_MD_CTX *ctx, const EVP_MD *type, ENGINE *impl)
    int EVP_DigestUpdate(EVP_MD_CTX *ctx, const void *d, size_t cnt)
    int EVP_DigestFinal_ex(EVP_MD_CTX *ctx, unsigned char *md, unsigned int *s)
    int EVP_MD_CTX_copy_ex(EVP_MD_CTX *out, const EVP_MD_CTX *inp)


cdef inline bint _meets(const unsigned char *digest, int difficulty) nogil:
    cdef int full = difficulty >> 3
    cdef int rem = difficulty & 7
    cdef int i
    if difficulty <= 0:
        return True
    if difficulty > 256:
        return False
    for i in range(full):
        if digest[i] != 0:
            return False
    if rem == 0:
        return True
    return (digest[full] >> (8 - rem)) == 0


cdef inline int _format_u64(uint64_t value, char *out) nogil:
    cdef char tmp[24]
    cdef int n = 0
    cdef int i
    if value == 0:
        out[0] = b'0'
        return 1
    while value:
        tmp[n] = <char>(48 + value % 10)
        value //= 10
        n += 1
    for i in range(n):
        out[i] = tmp[n - 1 - i]
    return n


def meets_difficulty_digest(bytes digest, int difficulty):
    if difficulty > 8 * len(digest):
        return False
    return _meets(<const unsigned char *>digest, difficulty)


def search_nonce(bytes prefix, bytes suffix, int difficulty, uint64_t start, uint64_t stop):
    """First nonce in ``[start, stop)`` whose header digest meets ``difficulty``, else -1."""
    cdef EVP_MD_CTX *base = EVP_MD_CTX_new()
    cdef EVP_MD_CTX *work = EVP_MD_CTX_new()
    cdef unsigned char md[32]
    cdef unsigned int mdlen
    cdef char digits[24]
    cdef int ndigits
    cdef uint64_t nonce
    cdef const char *pre = prefix
    cdef const char *suf = suffix
    cdef size_t npre = len(prefix)
    cdef size_t nsuf = len(suffix)
    cdef long long found = -1
    if base == NULL or work == NULL:
        EVP_MD_CTX_free(base)
        EVP_MD_CTX_free(work)
        raise MemoryError()
    try:
        if EVP_DigestInit_ex(base, EVP_sha256(), NULL) != 1:
            raise RuntimeError("EVP_DigestInit_ex failed")
        EVP_DigestUpdate(base, pre, npre)
        with nogil:
            nonce = start
            while nonce < stop:
                EVP_MD_CTX_copy_ex(work, base)
                ndigits = _format_u64(nonce, digits)
                EVP_DigestUpdate(work, digits, ndigits)
                EVP_DigestUpdate(work, suf, nsuf)
                EVP_DigestFinal_ex(work, md, &mdlen)
                if _meets(md, difficulty):
                    found = <long long>nonce
                    break
                nonce += 1
    finally:
        EVP_MD_CTX_free(base)
        EVP_MD_CTX_free(work)
    return found

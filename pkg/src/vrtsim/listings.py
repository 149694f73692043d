"""Reference listings used by tests, scripts and the README."""

# int main() { int my_arr[] = {13,56,71,38,93,12}; int *ptr, i; ... }
# compiled for a 56-byte frame: my_arr at fp+16, ptr at fp+40, i at fp+44,
# saved $30/$31 at 48/52.  The first six instructions sit at the addresses a
# PISA object dump would show (0x4001f0, 0x4001f8, ...).
THREE_LOCALS_MAIN = """\
.org 0x4001f0
main:
    addiu $29,$29,-56
    sw $31,52($29)
    sw $30,48($29)
    addu $30,$0,$29
    jal __main
    addiu $2,$30,16       # &my_arr[0]
    addiu $3,$0,13
    sw $3,0($2)
    addiu $3,$0,56
    sw $3,4($2)
    addiu $3,$0,71
    sw $3,8($2)
    addiu $3,$0,38
    sw $3,12($2)
    addiu $3,$0,93
    sw $3,16($2)
    addiu $3,$0,12
    sw $3,20($2)
    sw $2,40($30)         # ptr = my_arr
    sw $0,44($30)         # i = 0
    addu $29,$0,$30
    lw $31,52($29)
    lw $30,48($29)
    addiu $29,$29,56
    jr $31
__main:
    jr $31
"""

# Same function, stopped before the epilogue so the live table can be read.
THREE_LOCALS_BODY_END = 0x4001f0 + 8 * 20  # address of "addu $29,$0,$30"

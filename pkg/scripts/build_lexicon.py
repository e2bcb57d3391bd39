#!/usr/bin/env python3
"""Regenerate the embedded POS lexicon (src/cirkit/lexicon.tsv).

Curated word lists per tag, emitted as a sorted word<TAB>TAG table. Words the
tagger must treat as out-of-vocabulary (exercised by tests) are asserted out.
Run from the repo root:  python3 scripts/build_lexicon.py
"""

from pathlib import Path

DET = """
the a an this that these those another some any no each every either neither
both such its his her their my your our whose
""".split()

PREP = """
in on at of off with without under over above below behind beside near by
from to into onto across along around between among against inside outside
within upon toward towards beneath underneath through during past per
""".split()

CONJ = "and or but nor yet whereas while plus".split()

NUM = """
zero one two three four five six seven eight nine ten eleven twelve thirteen
fourteen fifteen sixteen seventeen eighteen nineteen twenty thirty forty
fifty sixty seventy eighty ninety hundred thousand million first second third
fourth fifth sixth seventh eighth ninth tenth dozen half quarter
""".split()

OTHER = """
it he she they them him us we you i me mine yours ours theirs itself himself
herself themselves myself yourself ourselves there here very too also only
just more most less least not never always often sometimes rarely again once
twice now then soon later early late when where how why who whom what which
if because although though however instead rather quite almost nearly
entirely completely partially slightly somewhat exactly already still even
away together apart please yes maybe perhaps
""".split()

VERB = """
add adds added remove removes removed replace replaces replaced delete
deletes deleted erase erases erased make makes made change changes changed
convert converts converted modify modifies modified alter alters altered
transform transforms transformed place places placed put puts move moves
moved turn turns turned show shows showed shown display displays displayed
render renders rendered have has had having is are was were be been being am
do does did done doing can could will would shall should may might must swap
swaps swapped switch switches switched set sets insert inserts inserted
introduce introduces introduced eliminate eliminates eliminated fill fills
filled cover covers covered uncover uncovers uncovered open opens opened
close closes hang hangs hung stack stacks stacked arrange arranges arranged
rearrange rearranges rearranged paint paints repaint repaints draw draws drew
drawn crop crops cropped zoom zooms zoomed tilt tilts tilted extend extends
extended reduce reduces reduced increase increases increased decrease
decreases decreased enlarge enlarges enlarged shrink shrinks shrank widen
widens widened narrows narrowed duplicate duplicates duplicated
mirrored invert inverts inverted lighten lightens lightened
darken darkens darkened brighten brightens brightened soften softens
softened sharpen sharpens sharpened blur blurs blurred cleans cleaned
straighten straightens straightened align aligns aligned shift shifts
shifted rotate rotates rotated flip flips flipped resize resizes resized
recolor recolors recolored redo undo undid keep keeps kept retain retains
retained discard discards discarded attach attaches attached detach detaches
detached bring brings brought take takes took taken give gives gave given
get gets got go goes went gone come comes came see sees saw seen look looks
looked appear appears appeared disappear disappears disappeared become
becomes became stand stands stood sit sits sat lie lay hold holds held carry
carries carried wear wears wore worn use uses used want wants wanted need
needs needed seem seems seemed grow grows grew grown run runs ran walk walks
walked fly flies flew flown swim swims swam eat eats ate eaten drink drinks
drank say says said tell tells told ask asks asked find finds found know
knows knew known think thinks thought feel feels felt leave send
sends sent build builds built break breaks broke cut cuts fix fixes
fixed adjust adjusts adjusted update updates updated include includes
included exclude excludes excluded feature features featured integrate
integrates integrated combine combines combined split splits raise raises
raised lower lowers lowered push pushes pushed pull pulls pulled drop drops
dropped lift lifts lifted throw throws threw catch catches caught draped fold folds folded unfold unfolds unfolded wrap wraps wrapped
tuck tucks tucked prop props propped lean leans leaned rest rests rested
""".split()

ADJ = """
red orange yellow green blue purple violet pink brown black white gray grey
beige tan cream ivory maroon crimson scarlet navy teal cyan magenta
turquoise indigo lavender olive gold golden silver silvery bronze copper
multicolored colorful colored striped spotted dotted checkered plaid floral
patterned plain solid small large big tiny huge little giant enormous
miniature tall short long wide narrow thin thick slim broad round circular square
rectangular oval triangular curved straight flat deep shallow bright dark
light pale vivid dull shiny matte glossy transparent opaque clear wooden
metallic plastic ceramic woolen cotton silk velvet soft hard smooth rough
fuzzy furry new old modern vintage antique rustic fancy simple ornate
decorative elegant empty full clean dirty messy tidy neat visible hidden
convertible fingerless floppy fluffy cozy comfortable beautiful pretty ugly
nice good bad fresh stale closed broken cracked torn faded polished warm
cool cold hot icy sunny cloudy wet dry heavy lightweight sturdy delicate
upper lowermost inner outer leftmost rightmost topmost bottommost central
single double triple spare extra main primary secondary identical different
similar matching opposite seamless glass leather fabric denim wicker marble
granite chrome brass steel
""".split()

NOUN = """
top bottom left right center corner side middle background foreground edge
front back row column cell area region spot position ball box star cross
circle triangle diamond heart ring dot stripe block cube sphere bird parrot
cat dog kitten puppy horse cow sheep fish child children person people man
woman men women boy girl baby hand arm leg head face hair eye eyes finger
foot feet room bedroom bathroom bed bedspread blanket sheet pillow cushion
lamp lampshade desk chair armchair sofa couch table nightstand dresser
wardrobe closet mirror window curtain drape blind wall floor ceiling carpet
rug mat painting picture frame artwork television tv monitor screen laptop
computer keyboard mouse phone telephone clock towel robe slipper hanger
shelf bookshelf book magazine vase flower plant pot cup mug bottle kettle
tray basket bin wastebasket door handle knob drawer faucet sink bathtub
shower toilet tile soap shampoo rod headboard footboard mattress tree branch
leaf bush grass greenery sky cloud sun moon mountain hill river lake sea
ocean beach sand rock stone garden park color colour pattern design detail
button zipper flap mitten glove scarf hat coat jacket shirt pants dress shoe
boot sock tie belt bag purse backpack suitcase umbrella object image text
query photo scene item thing apple banana bread cake coffee tea milk juice
water plate bowl fork knife spoon napkin chandelier ottoman bench stool
recliner loveseat futon bureau cabinet counter countertop island stove oven
microwave refrigerator fridge dishwasher toaster blender pan skillet lid
spatula whisk ladle grater strainer cutting board towels pillows curtains
lamps chairs tables walls windows doors shelves books plants flowers mirrors
pictures frames rugs carpets tiles drawers cabinets pots pans cups mugs
glasses bottles bins boxes balls stars crosses circles triangles diamonds
hearts rings dots stripes blocks cubes spheres birds cats dogs hands arms
heads faces rooms beds blankets sheets cushions desks sofas couches closets
ceilings floors screens laptops computers keyboards phones clocks robes
vases baskets trays sinks showers toilets soaps branches trees leaves bushes
clouds mountains hills rivers lakes beaches rocks stones gardens parks
colors patterns designs details buttons zippers flaps mittens gloves scarves
hats coats jackets shirts dresses shoes boots socks ties belts bags purses
backpacks suitcases umbrellas objects images texts queries photos scenes
items things nightlight suitcase rack luggage ironing iron hairdryer kettle
safe minibar thermostat vent radiator fireplace mantel staircase banister
railing doorway hallway entryway foyer lobby balcony terrace patio awning
fence gate pathway walkway driveway lawn hedge shrub trellis planter
flowerpot birdhouse feeder fountain pond statue sculpture ornament figurine
candle candlestick lantern sconce bulb fixture outlet cord cable
plug charger adapter remote console speaker headphone earbud microphone
camera tripod easel canvas paintbrush palette sketchbook notebook journal
pen pencil marker crayon eraser ruler scissors stapler tape glue folder
binder envelope stamp postcard letter card calendar planner clipboard
whiteboard corkboard pin magnet hook nail screw hammer screwdriver wrench
plier drill level tape measure toolbox ladder bucket mop broom dustpan
vacuum sponge rag cloth wipe spray cleaner detergent soap dish rack hamper
laundry washer dryer iron board hanger closet rod shoe rack mat doormat
runner threshold sill ledge alcove niche nook cranny recess partition
divider screen panel shutter valance pelmet cornice molding trim baseboard
wainscot paneling wallpaper mural decal sticker poster print photograph
portrait landscape collage mosaic tapestry banner flag pennant
streamer garland wreath bow ribbon
""".split()

# Words tests rely on being out-of-vocabulary.
FORCED_OOV = {"lorikeet", "wainscoting", "zelkova"}


def build() -> dict[str, str]:
    table: dict[str, str] = {}
    for tag, words in (
        ("DET", DET),
        ("PREP", PREP),
        ("CONJ", CONJ),
        ("NUM", NUM),
        ("VERB", VERB),
        ("ADJ", ADJ),
        ("NOUN", NOUN),
        ("OTHER", OTHER),
    ):
        for w in words:
            w = w.lower()
            if w in table:
                if table[w] != tag:
                    raise SystemExit(f"conflicting tags for {w!r}: {table[w]} vs {tag}")
                continue
            table[w] = tag
    for w in FORCED_OOV:
        if w in table:
            raise SystemExit(f"{w!r} must stay out of the lexicon")
    return table


def main() -> None:
    table = build()
    out = Path(__file__).resolve().parent.parent / "src" / "cirkit" / "lexicon.tsv"
    lines = [f"{w}\t{tag}" for w, tag in sorted(table.items())]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} entries to {out}")


if __name__ == "__main__":
    main()

"""Regenerates the fixture pack's PNG images. Output is checked in."""
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

HERE = Path(__file__).parent
WWW = HERE / "www"
SIZE = (160, 160)


def canvas(bg=(250, 250, 248)):
    img = Image.new("RGB", SIZE, bg)
    return img, ImageDraw.Draw(img)


def blanket(color, stripe):
    img, d = canvas()
    d.rectangle([24, 30, 136, 130], fill=color)
    for y in range(40, 130, 18):
        d.line([24, y, 136, y], fill=stripe, width=3)
    for x in range(26, 136, 8):
        d.line([x, 130, x, 142], fill=color, width=2)
    return img


def mug(color, handle_left=False, band=None):
    img, d = canvas()
    d.rectangle([48, 46, 112, 126], fill=color)
    d.ellipse([48, 38, 112, 54], fill=tuple(max(c - 40, 0) for c in color))
    if handle_left:
        d.arc([24, 62, 60, 106], 90, 270, fill=color, width=9)
    else:
        d.arc([100, 62, 136, 106], 270, 90, fill=color, width=9)
    if band:
        d.rectangle([48, 80, 112, 92], fill=band)
    return img


def toaster(label):
    img, d = canvas()
    d.rounded_rectangle([22, 50, 138, 130], radius=14, fill=(176, 180, 186))
    d.rectangle([44, 42, 70, 52], fill=(40, 40, 40))
    d.rectangle([90, 42, 116, 52], fill=(40, 40, 40))
    d.rectangle([40, 88, 120, 118], fill=(255, 255, 255))
    font = ImageFont.load_default()
    d.text((52, 96), label, fill=(0, 0, 0), font=font)
    return img


def sign(text_lines):
    img, d = canvas((196, 226, 196))
    d.rectangle([74, 90, 86, 158], fill=(110, 74, 40))
    d.rectangle([18, 30, 142, 96], fill=(244, 204, 40), outline=(20, 20, 20), width=3)
    font = ImageFont.load_default()
    for i, line in enumerate(text_lines):
        d.text((32, 44 + i * 18), line, fill=(0, 0, 0), font=font)
    return img


def lighthouse():
    img = Image.new("RGB", SIZE)
    d = ImageDraw.Draw(img)
    for y in range(SIZE[1]):
        d.line([0, y, SIZE[0], y], fill=(250 - y // 2, 170 + y // 3, 120 + y // 2))
    d.rectangle([0, 132, 160, 160], fill=(40, 80, 140))
    d.polygon([(66, 132), (94, 132), (88, 44), (72, 44)], fill=(245, 245, 245))
    for y in (60, 84, 108):
        d.rectangle([70, y, 90, y + 10], fill=(200, 30, 30))
    d.rectangle([70, 32, 90, 44], fill=(255, 230, 120))
    return img


def bicycle(color, small=False):
    img, d = canvas()
    r = 22 if small else 30
    y = 118
    d.ellipse([20, y - r, 20 + 2 * r, y + r], outline=(30, 30, 30), width=4)
    d.ellipse([140 - 2 * r, y - r, 140, y + r], outline=(30, 30, 30), width=4)
    lx, rx = 20 + r, 140 - r
    d.line([lx, y, 80, y - 40, rx, y, lx, y], fill=color, width=5)
    d.line([80, y - 40, 80, y - 58], fill=color, width=4)
    d.line([rx, y, rx - 6, y - 56], fill=color, width=4)
    return img


def lamp(shade, tall=False):
    img, d = canvas()
    top = 20 if tall else 50
    d.polygon([(52, top + 40), (108, top + 40), (94, top), (66, top)], fill=shade)
    d.line([80, top + 40, 80, 138], fill=(90, 90, 90), width=4)
    d.ellipse([56, 132, 104, 146], fill=(90, 90, 90))
    return img


def camera():
    img, d = canvas()
    d.rounded_rectangle([26, 56, 134, 124], radius=8, fill=(36, 36, 40))
    d.rectangle([36, 48, 62, 58], fill=(36, 36, 40))
    d.ellipse([58, 66, 110, 118], fill=(90, 90, 100), outline=(200, 200, 200), width=3)
    d.ellipse([74, 82, 94, 102], fill=(20, 20, 60))
    return img


def main():
    shop = WWW / "shopping.test" / "img"
    blanket((200, 30, 40), (150, 20, 30)).save(shop / "wool_throw_red.png")
    blanket((214, 50, 56), (245, 240, 230)).save(shop / "fleece_throw_red.png")
    blanket((40, 80, 200), (245, 240, 230)).save(shop / "fleece_throw_blue.png")
    mug((40, 150, 60)).save(shop / "mug_green.png")
    mug((240, 200, 40), handle_left=True, band=(120, 90, 20)).save(shop / "mug_yellow.png")
    toaster("TX-500").save(shop / "toaster_tx500.png")
    toaster("TX-310").save(shop / "toaster_tx310.png")
    lighthouse().save(shop / "lighthouse_print.png")

    forum = WWW / "reddit.test" / "img"
    sign(["TRAIL CLOSED", "BRIDGE OUT"]).save(forum / "trail_sign.png")
    lighthouse().save(forum / "lighthouse.png")
    bicycle((30, 120, 60)).save(forum / "commute_bike.png")

    ads = WWW / "classifieds.test" / "img"
    bicycle((200, 40, 40)).save(ads / "road_bike.png")
    bicycle((60, 110, 220), small=True).save(ads / "kids_bike.png")
    bicycle((40, 140, 70)).save(ads / "mountain_bike.png")
    lamp((230, 210, 150)).save(ads / "desk_lamp.png")
    lamp((200, 170, 60), tall=True).save(ads / "floor_lamp.png")
    camera().save(ads / "film_camera.png")

    # task inputs and references
    mug((40, 150, 60)).save(HERE / "images" / "mug_green.png")
    lighthouse().save(HERE / "images" / "lighthouse_photo.png")


if __name__ == "__main__":
    main()
